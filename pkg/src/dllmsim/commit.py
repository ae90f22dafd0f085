"""Stochastic token-commitment oracle.

The oracle decides which masked positions of a decode window commit at each
step.  The earliest window position always commits (the progress rule); a
position at window rank j >= 1 commits independently with probability
min(1, m * q**j), where m is a per-request rate multiplier.  With m = 1 the
expected commits for a window of w positions is (1 - q**w) / (1 - q), which is
what calibration targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyWindow, InfeasibleTarget, TraceExhausted

RATE_MULTIPLIER_MIN = 0.25
RATE_MULTIPLIER_MAX = 4.0


@dataclass(frozen=True)
class CommitProfile:
    """Per-position commit decay plus request-level rate heterogeneity.

    q = 0 is the degenerate one-token-per-step profile (the calibration
    target of 1.0 maps there), q -> 1 commits the whole window.
    """

    q: float
    rate_jitter_sigma: float = 0.0
    note: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"q must lie in [0, 1), got {self.q}")
        if self.rate_jitter_sigma < 0.0:
            raise ValueError("rate_jitter_sigma must be >= 0")

    def mean_commits(self, window: int) -> float:
        """Closed-form expected commits for a full window, multiplier 1."""
        if self.q == 0.0:
            return 1.0
        return (1.0 - self.q**window) / (1.0 - self.q)


def calibrate_q(block_size: int, target_mean: float, tol: float = 1e-9) -> float:
    """Solve (1 - q**B) / (1 - q) = target_mean for q by bisection.

    target_mean = 1 maps to q = 0 exactly; target_mean = block_size maps to
    the open upper boundary (returned as 1 - 1e-9).
    """
    if block_size < 2:
        raise InfeasibleTarget(f"block_size must be >= 2, got {block_size}")
    if not 1.0 <= target_mean <= block_size:
        raise InfeasibleTarget(
            f"target_mean {target_mean} outside [1, {block_size}]"
        )
    if target_mean == 1.0:
        return 0.0
    hi_edge = 1.0 - 1e-9
    if target_mean == float(block_size):
        return hi_edge

    def mean(q: float) -> float:
        if q == 0.0:
            return 1.0
        return (1.0 - q**block_size) / (1.0 - q)

    lo, hi = 0.0, hi_edge
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(mean(mid) - target_mean) < tol:
            return mid
        if mean(mid) < target_mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def commit_step(
    profile: CommitProfile,
    rate_multiplier: float,
    window: Sequence[int],
    rng: np.random.Generator,
) -> set[int]:
    """Decide which window positions commit this step.

    The window must be a strictly increasing position sequence.  Rank is
    window-relative: the j-th window entry uses decay q**j regardless of the
    absolute position.
    """
    if len(window) == 0:
        raise EmptyWindow("commit_step requires a nonempty window")
    for a, b in zip(window, window[1:]):
        if b <= a:
            raise ValueError("window positions must be strictly increasing")
    commits = {window[0]}
    n = len(window)
    if n > 1:
        ranks = np.arange(1, n)
        probs = np.minimum(1.0, rate_multiplier * profile.q**ranks)
        draws = rng.random(n - 1)
        for pos, p, u in zip(window[1:], probs, draws):
            if u < p:
                commits.add(pos)
    return commits


def sample_rate_multiplier(profile: CommitProfile, rng: np.random.Generator) -> float:
    """Draw a per-request lognormal rate factor with median 1, clamped."""
    if profile.rate_jitter_sigma == 0.0:
        return 1.0
    m = math.exp(profile.rate_jitter_sigma * rng.standard_normal())
    return min(RATE_MULTIPLIER_MAX, max(RATE_MULTIPLIER_MIN, m))


# ---------------------------------------------------------------------------
# Jitter-aware calibration.
#
# With a per-request multiplier the marginal commit probability at rank j is
# E_m[min(1, m q**j)], so matching a target mean requires solving for q under
# the multiplier distribution.  The moments are computed by quadrature over
# the clamped lognormal.

_Z_GRID = np.linspace(-8.0, 8.0, 2001)
_Z_WEIGHTS = np.exp(-0.5 * _Z_GRID**2)
_Z_WEIGHTS = _Z_WEIGHTS / _Z_WEIGHTS.sum()


def _jittered_moments(q: float, sigma: float, window: int) -> tuple[float, float]:
    """Mean and std of per-step commits at a fixed window under jitter."""
    if sigma == 0.0:
        m_vals = np.array([1.0])
        weights = np.array([1.0])
    else:
        m_vals = np.clip(np.exp(sigma * _Z_GRID), RATE_MULTIPLIER_MIN, RATE_MULTIPLIER_MAX)
        weights = _Z_WEIGHTS
    ranks = np.arange(1, window)
    if q == 0.0:
        probs = np.zeros((len(m_vals), len(ranks)))
    else:
        probs = np.minimum(1.0, np.outer(m_vals, q**ranks))
    mean_given_m = 1.0 + probs.sum(axis=1)
    var_given_m = (probs * (1.0 - probs)).sum(axis=1)
    mean = float(np.dot(weights, mean_given_m))
    second = float(np.dot(weights, var_given_m + mean_given_m**2))
    var = max(0.0, second - mean * mean)
    return mean, math.sqrt(var)


def fit_profile(
    block_size: int,
    target_mean: float,
    target_std: float = 0.0,
    sigma_grid: Iterable[float] = tuple(i / 10 for i in range(0, 16)),
    note: str = "",
) -> CommitProfile:
    """Calibrate (q, rate_jitter_sigma) against per-step commit statistics.

    For each candidate sigma, q is re-solved so the jittered mean matches
    target_mean; the sigma whose model std is closest to target_std wins.
    Heavy-tailed targets (std above what the clamped lognormal can express)
    saturate at the largest grid value.
    """
    if not 1.0 <= target_mean <= block_size:
        raise InfeasibleTarget(
            f"target_mean {target_mean} outside [1, {block_size}]"
        )

    def solve_q(sigma: float) -> float:
        if target_mean == 1.0:
            return 0.0
        lo, hi = 0.0, 1.0 - 1e-9
        if _jittered_moments(hi, sigma, block_size)[0] < target_mean:
            return hi
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _jittered_moments(mid, sigma, block_size)[0] < target_mean:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    best: tuple[float, float, float] | None = None  # (err, sigma, q)
    for sigma in sigma_grid:
        q = solve_q(sigma)
        _, std = _jittered_moments(q, sigma, block_size)
        err = abs(std - target_std)
        if best is None or err < best[0] - 1e-12:
            best = (err, sigma, q)
    assert best is not None
    return CommitProfile(q=best[2], rate_jitter_sigma=best[1], note=note)


# ---------------------------------------------------------------------------
# Commit traces and replay.


@dataclass
class CommitTrace:
    """Per-request, per-step committed position sets.

    steps[request_id] is the ordered list of committed-position sets; across
    steps the sets are disjoint and, for a finished request, their union is
    exactly {0 .. output_tokens-1}.
    """

    steps: dict[int, list[set[int]]] = field(default_factory=dict)

    def record(self, request_id: int, step: int, positions: Iterable[int]) -> None:
        per_req = self.steps.setdefault(request_id, [])
        if step != len(per_req):
            raise ValueError(f"steps must be recorded in order, expected {len(per_req)}, got {step}")
        per_req.append(set(positions))

    def validate(self, output_tokens: dict[int, int]) -> None:
        """Check disjointness and union-completeness against known lengths."""
        for rid, sets in self.steps.items():
            seen: set[int] = set()
            for s in sets:
                if seen & s:
                    raise ValueError(f"request {rid}: positions committed twice")
                seen |= s
            if rid in output_tokens and seen != set(range(output_tokens[rid])):
                raise ValueError(f"request {rid}: trace does not cover the output")

    def to_jsonl(self) -> str:
        lines = []
        for rid in sorted(self.steps):
            for step, positions in enumerate(self.steps[rid]):
                lines.append(
                    json.dumps(
                        {"request_id": rid, "step": step, "positions": sorted(positions)}
                    )
                )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "CommitTrace":
        trace = cls()
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        rows.sort(key=lambda r: (r["request_id"], r["step"]))
        for row in rows:
            trace.record(row["request_id"], row["step"], row["positions"])
        return trace


def replay_oracle(
    trace: CommitTrace, request_id: int, step_index: int, window: Sequence[int]
) -> set[int]:
    """Verbatim replay: the traced step's positions intersected with the window.

    The progress rule is disabled; an empty intersection is returned as-is.
    """
    per_req = trace.steps.get(request_id)
    if per_req is None or step_index >= len(per_req):
        raise TraceExhausted(
            f"no trace entry for request {request_id} step {step_index}"
        )
    return per_req[step_index] & set(window)


# ---------------------------------------------------------------------------
# Oracle adapters used by the decode engines.


class StochasticOracle:
    """Draws commits from a CommitProfile using each request's rng stream."""

    def __init__(self, profile: CommitProfile):
        self.profile = profile

    def commits(self, request, window: Sequence[int]) -> set[int]:
        return commit_step(self.profile, request.rate_multiplier, window, request.rng)


class ReplayOracle:
    """Replays a CommitTrace through an engine.

    In carryover mode a traced position that was not computable at its traced
    step (window too small) stays eligible and commits at the first later step
    whose window contains it; once the trace is exhausted every remaining
    position is eligible.  Strict mode replays entries verbatim and raises
    TraceExhausted past the end.
    """

    def __init__(self, trace: CommitTrace, carryover: bool = True):
        self.trace = trace
        self.carryover = carryover
        self._eligible: dict[int, set[int]] = {}

    def commits(self, request, window: Sequence[int]) -> set[int]:
        step = request.steps_taken
        if not self.carryover:
            return replay_oracle(self.trace, request.id, step, window)
        pool = self._eligible.setdefault(request.id, set())
        per_req = self.trace.steps.get(request.id, [])
        if step < len(per_req):
            pool |= per_req[step]
        elif not pool:
            pool |= set(range(request.output_tokens)) - _committed_positions(request)
        return pool & set(window)

    def consume(self, request, committed: set[int]) -> None:
        if self.carryover and request.id in self._eligible:
            self._eligible[request.id] -= committed


def _committed_positions(request) -> set[int]:
    return set(np.nonzero(request.states != 0)[0].tolist())
