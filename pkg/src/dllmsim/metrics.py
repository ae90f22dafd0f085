"""Run statistics: throughput, TPOT percentiles, utilization, SLO capacity."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

from .core import IterationKind, IterationRecord, Request
from .errors import ConfigError, EmptyRun, SingleToken, SloInfeasible


def tpot(request: Request) -> float:
    """Time per output token, anchored at the first committed token."""
    if request.committed < 2:
        raise SingleToken(f"request {request.id} committed {request.committed} < 2")
    if request.first_token_time is None or request.finish_time is None:
        raise SingleToken(f"request {request.id} is missing timing marks")
    return (request.finish_time - request.first_token_time) / (request.committed - 1)


def nearest_rank_percentile(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not values:
        raise EmptyRun("percentile of an empty sample")
    if not 0 < pct <= 100:
        raise ValueError(f"pct must be in (0, 100], got {pct}")
    ordered = sorted(values)
    rank = math.ceil(pct / 100.0 * len(ordered))
    return ordered[rank - 1]


@dataclass(frozen=True)
class RunSummary:
    """Aggregate statistics of one simulation run (decode phase only)."""

    decode_throughput: float
    tpot_p50: float
    tpot_p90: float
    tpot_p99: float
    mean_tu: float
    mean_batch: float
    mean_chunk: float
    median_chunk: float
    completed: int

    def __post_init__(self) -> None:
        if not self.tpot_p50 <= self.tpot_p90 <= self.tpot_p99:
            raise ValueError("TPOT percentiles must be nondecreasing")
        if not 0.0 <= self.mean_tu <= 1.0:
            raise ValueError(f"mean_tu must be in [0, 1], got {self.mean_tu}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def summarize(
    records: Sequence[IterationRecord], request_log: Sequence[Request]
) -> RunSummary:
    """Aggregate decode-phase records and completed requests.

    Throughput and utilization come from Decode rows only; TPOT percentiles
    use nearest-rank over requests that committed at least two tokens.
    """
    decode = [r for r in records if r.kind is IterationKind.DECODE]
    if not decode or not request_log:
        raise EmptyRun("no decode iterations or no completed requests")
    total_latency = sum(r.latency for r in decode)
    total_committed = sum(r.committed_tokens for r in decode)
    total_computed = sum(r.computed_tokens for r in decode)
    if total_latency <= 0 or total_computed <= 0:
        raise EmptyRun("decode records carry no work")

    tpots = []
    for req in request_log:
        try:
            tpots.append(tpot(req))
        except SingleToken:
            continue
    if not tpots:
        raise EmptyRun("no request committed >= 2 tokens")

    chunks = [float(r.chunk_size) for r in decode if r.chunk_size > 0]
    return RunSummary(
        decode_throughput=total_committed / total_latency,
        tpot_p50=nearest_rank_percentile(tpots, 50),
        tpot_p90=nearest_rank_percentile(tpots, 90),
        tpot_p99=nearest_rank_percentile(tpots, 99),
        mean_tu=total_committed / total_computed,
        mean_batch=sum(r.batch_size for r in decode) / len(decode),
        mean_chunk=sum(chunks) / len(chunks) if chunks else 0.0,
        median_chunk=nearest_rank_percentile(chunks, 50) if chunks else 0.0,
        completed=len(request_log),
    )


def slo_capacity(
    probe: Callable[[float], float],
    slo_s: float,
    rate_low: float,
    rate_high: float,
    rel_tol: float = 0.02,
    grid_factor: float = 1.5,
) -> float:
    """Largest arrival rate whose probed P90 TPOT stays within the SLO.

    probe(rate) must return the P90 TPOT in seconds (already aggregated over
    seeds).  A geometric grid brackets the knee, then bisection narrows it
    to the requested relative tolerance.
    """
    if rate_low <= 0 or rate_high <= rate_low:
        raise ConfigError(f"need 0 < rate_low < rate_high, got [{rate_low}, {rate_high}]")
    if math.isinf(slo_s):
        return rate_high
    if probe(rate_low) > slo_s:
        raise SloInfeasible(f"P90 TPOT exceeds {slo_s}s even at rate {rate_low}")

    lo = rate_low
    hi = None
    rate = rate_low
    while hi is None:
        rate = min(rate * grid_factor, rate_high)
        if probe(rate) <= slo_s:
            lo = rate
            if rate >= rate_high:
                return rate_high
        else:
            hi = rate
    while (hi - lo) / lo > rel_tol:
        mid = 0.5 * (lo + hi)
        if probe(mid) <= slo_s:
            lo = mid
        else:
            hi = mid
    return lo
