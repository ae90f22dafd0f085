"""Piecewise-affine iteration latency as a function of computed tokens.

Three regimes: memory-bound (near-flat), transition, and compute-bound.
Latency is continuous, nondecreasing, and convex (slopes nondecreasing).
All internal units are seconds and tokens; serialization uses ms and
us/token for readability.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import InsufficientProfile

_CONTINUITY_TOL = 1e-9


@dataclass(frozen=True)
class Segment:
    """One affine regime: latency = intercept + slope * (x - x_start)."""

    x_start: float
    slope: float  # seconds per token
    intercept: float  # seconds, value at x_start


@dataclass(frozen=True)
class CostModel:
    segments: tuple[Segment, Segment, Segment]

    def __post_init__(self) -> None:
        segs = self.segments
        if len(segs) != 3:
            raise ValueError("a cost model has exactly 3 segments")
        if segs[0].x_start != 0:
            raise ValueError("first segment must start at x = 0")
        for a, b in zip(segs, segs[1:]):
            if b.x_start <= a.x_start:
                raise ValueError("segment starts must increase")
            if b.slope < a.slope:
                raise ValueError("slopes must be nondecreasing (convexity)")
            joint = a.intercept + a.slope * (b.x_start - a.x_start)
            if abs(joint - b.intercept) > _CONTINUITY_TOL * max(1.0, abs(joint)):
                raise ValueError(
                    f"discontinuity at x = {b.x_start}: {joint} vs {b.intercept}"
                )
        if any(s.slope < 0 for s in segs) or segs[0].intercept < 0:
            raise ValueError("slopes and base intercept must be nonnegative")

    def latency(self, x: float) -> float:
        """Iteration latency in seconds for x computed tokens."""
        if x < 0:
            raise ValueError(f"computed tokens must be >= 0, got {x}")
        seg = self.segments[0]
        for cand in self.segments[1:]:
            if x >= cand.x_start:
                seg = cand
            else:
                break
        return seg.intercept + seg.slope * (x - seg.x_start)

    def to_json(self) -> str:
        return json.dumps(
            {
                "segments": [
                    {
                        "x_start": s.x_start,
                        "slope_us_per_token": s.slope * 1e6,
                        "intercept_ms": s.intercept * 1e3,
                    }
                    for s in self.segments
                ]
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CostModel":
        data = json.loads(text)
        segs = tuple(
            Segment(
                x_start=float(s["x_start"]),
                slope=float(s["slope_us_per_token"]) * 1e-6,
                intercept=float(s["intercept_ms"]) * 1e-3,
            )
            for s in data["segments"]
        )
        return cls(segments=segs)  # type: ignore[arg-type]


def default_cost_model() -> CostModel:
    """A100-like defaults: flat memory-bound floor, saturation from x = 512.

    The scale is calibrated for trend reproduction, not absolute hardware
    numbers; override via config for other hardware shapes.
    """
    s1, s2, s3 = 0.5e-6, 8e-6, 80e-6
    b1, b2 = 128.0, 512.0
    i1 = 0.040
    i2 = i1 + s1 * b1
    i3 = i2 + s2 * (b2 - b1)
    return CostModel(
        segments=(
            Segment(0.0, s1, i1),
            Segment(b1, s2, i2),
            Segment(b2, s3, i3),
        )
    )


def fit(samples: Sequence[tuple[float, float]]) -> CostModel:
    """Fit a 3-segment model to (computed tokens, latency seconds) samples.

    Breakpoints are grid-searched over the sample x values; for each
    candidate pair the remaining parameters solve a nonnegative least
    squares on the hinge basis [1, x, (x-b1)+, (x-b2)+], which enforces
    monotonicity and convexity by construction.
    """
    if len(samples) < 9:
        raise InsufficientProfile(f"need >= 9 samples, got {len(samples)}")
    xs = np.asarray([s[0] for s in samples], dtype=float)
    ys = np.asarray([s[1] for s in samples], dtype=float)
    uniq = np.unique(xs)
    if len(uniq) < 9:
        raise InsufficientProfile("need >= 3 distinct x values per segment")

    best: tuple[float, float, float, np.ndarray] | None = None
    interior = uniq[1:-1]
    for i, b1 in enumerate(interior):
        for b2 in interior[i + 1 :]:
            n_lo = int((uniq <= b1).sum())
            n_mid = int(((uniq > b1) & (uniq <= b2)).sum())
            n_hi = int((uniq > b2).sum())
            if min(n_lo, n_mid, n_hi) < 3:
                continue
            design = np.column_stack(
                [
                    np.ones_like(xs),
                    xs,
                    np.maximum(0.0, xs - b1),
                    np.maximum(0.0, xs - b2),
                ]
            )
            theta, _ = nnls(design, ys)
            sse = float(np.sum((design @ theta - ys) ** 2))
            if best is None or sse < best[0] - 1e-15:
                best = (sse, float(b1), float(b2), theta)
    if best is None:
        raise InsufficientProfile("no breakpoint pair leaves 3 distinct x per segment")

    _, b1, b2, theta = best
    i0, s_base, d1, d2 = (float(v) for v in theta)
    s1 = s_base
    s2 = s_base + d1
    s3 = s_base + d1 + d2
    i1 = i0
    i2 = i1 + s1 * b1
    i3 = i2 + s2 * (b2 - b1)
    return CostModel(
        segments=(
            Segment(0.0, s1, i1),
            Segment(b1, s2, i2),
            Segment(b2, s3, i3),
        )
    )


PROFILE_CSV_HEADER = "x,latency_ms"


def profile_to_csv(samples: Sequence[tuple[float, float]]) -> str:
    """Serialize (tokens, seconds) samples with latency in ms."""
    lines = [PROFILE_CSV_HEADER]
    lines.extend(f"{x!r},{lat * 1e3!r}" for x, lat in samples)
    return "\n".join(lines) + "\n"


def profile_from_csv(text: str) -> list[tuple[float, float]]:
    reader = csv.DictReader(io.StringIO(text))
    return [(float(r["x"]), float(r["latency_ms"]) * 1e-3) for r in reader]
