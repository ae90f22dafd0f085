"""Virtual-clock simulation loop and sweep drivers.

One simulation owns a single GPU timeline: iterations run back to back, each
charged by the cost model for the tokens it actually computed.  Arrivals are
injected at iteration boundaries, prefills run as dedicated FCFS iterations
ahead of decoding, and each policy maps to one decode engine.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .commit import CommitProfile, StochasticOracle, sample_rate_multiplier
from .core import IterationKind, IterationRecord, Request
from .costmodel import CostModel
from .engine import apply_chunk, ar_step, block_diffusion_step, plan_chunk
from .errors import ConfigError, DegenerateIteration
from .metrics import RunSummary, slo_capacity, summarize
from .scheduler import (
    AutoregressivePolicy,
    BlockLevelBatch,
    CommitEstimator,
    ElasticChunk,
    FixedBlock,
    SchedulerPolicy,
    policy_name,
    select_chunk,
)
from .workload import DatasetProfile, TraceEntry, generate_trace, sample_length


@dataclass(frozen=True)
class OpenLoop:
    """Poisson arrivals at a fixed rate; the run drains after num_requests."""

    arrival_rate: float
    num_requests: int = 200


@dataclass(frozen=True)
class ClosedLoop:
    """Fixed concurrency: every completion immediately admits a fresh request."""

    concurrency: int
    total_requests: int


@dataclass(frozen=True)
class Scenario:
    """Everything one simulation needs; identical scenarios replay identically."""

    mode: OpenLoop | ClosedLoop
    policy: SchedulerPolicy
    commit_profile: CommitProfile
    cost_model: CostModel
    dataset: DatasetProfile
    seed: int = 0
    max_batch: int = 256
    requests: Optional[tuple[TraceEntry, ...]] = None
    oracle_factory: Optional[Callable[[], Any]] = None
    progress_guard: int = 8

    def __post_init__(self) -> None:
        if isinstance(self.mode, OpenLoop):
            if self.mode.arrival_rate <= 0:
                raise ConfigError(
                    f"arrival_rate must be > 0, got {self.mode.arrival_rate}"
                )
            if self.mode.num_requests < 1:
                raise ConfigError("num_requests must be >= 1")
        else:
            if self.mode.concurrency < 1:
                raise ConfigError("concurrency must be >= 1")
            if self.mode.total_requests < 1:
                raise ConfigError("total_requests must be >= 1")
        if self.max_batch < 1:
            raise ConfigError("max_batch must be >= 1")


@dataclass
class SimResult:
    records: list[IterationRecord]
    request_log: list[Request]


def _request_rng(seed: int, request_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(1, request_id))
    )


def _make_request(entry: TraceEntry, scenario: Scenario) -> Request:
    rng = _request_rng(scenario.seed, entry.id)
    req = Request(
        id=entry.id,
        arrival_time=entry.arrival_s,
        prompt_tokens=entry.prompt_tokens,
        output_tokens=entry.output_tokens,
        rng=rng,
    )
    req.rate_multiplier = sample_rate_multiplier(scenario.commit_profile, rng)
    return req


def _closed_loop_entry(
    rid: int, arrival: float, wl_rng: np.random.Generator,
    dataset: DatasetProfile, truncate: bool,
) -> TraceEntry:
    prompt = sample_length(dataset.prompt_mean, dataset.prompt_std, wl_rng)
    output = sample_length(dataset.output_mean, dataset.output_std, wl_rng)
    if truncate:
        # Stagger the initial wave mid-stream so block phases are unaligned.
        output = int(wl_rng.integers(1, output + 1))
    return TraceEntry(rid, arrival, prompt, output)


class _Loop:
    """Mutable state of one simulation run."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.policy = scenario.policy
        self.cost = scenario.cost_model
        self.oracle = (
            scenario.oracle_factory()
            if scenario.oracle_factory is not None
            else StochasticOracle(scenario.commit_profile)
        )
        self.clock = 0.0
        self.future: deque[Request] = deque()
        self.pending: deque[Request] = deque()
        self.ready: deque[Request] = deque()
        self.active: list[Request] = []
        self.records: list[IterationRecord] = []
        self.completed: list[Request] = []
        self.zero_streak = 0

        # Closed-loop replacement bookkeeping.
        self.closed = isinstance(scenario.mode, ClosedLoop)
        self.spawned = 0
        self.wl_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=scenario.seed, spawn_key=(0,))
        )

        if isinstance(self.policy, ElasticChunk):
            self.estimator: Optional[CommitEstimator] = CommitEstimator(
                window_size=self.policy.block_size,
                alpha=self.policy.alpha,
                prior_q=scenario.commit_profile.q,
                min_observations=self.policy.min_observations,
            )
        else:
            self.estimator = None
        self.previous_chunk: Optional[int] = None

        # Block-level batching round state.
        self.round_members: list[Request] = []
        self.round_start_block: dict[int, int] = {}

        self._seed_arrivals()

    def _seed_arrivals(self) -> None:
        sc = self.scenario
        if sc.requests is not None:
            entries = sorted(sc.requests, key=lambda e: (e.arrival_s, e.id))
        elif isinstance(sc.mode, OpenLoop):
            entries = generate_trace(
                sc.dataset, sc.mode.arrival_rate, sc.mode.num_requests, sc.seed
            )
        else:
            n = min(sc.mode.concurrency, sc.mode.total_requests)
            entries = [
                _closed_loop_entry(rid, 0.0, self.wl_rng, sc.dataset, truncate=True)
                for rid in range(n)
            ]
            self.spawned = n
        self.future.extend(sorted(
            (_make_request(e, sc) for e in entries),
            key=lambda r: (r.arrival_time, r.id),
        ))

    # -- per-iteration pieces ------------------------------------------------

    def inject_arrivals(self) -> None:
        while self.future and self.future[0].arrival_time <= self.clock + 1e-12:
            self.pending.append(self.future.popleft())

    def run_prefill(self) -> None:
        req = self.pending.popleft()
        latency = self.cost.latency(req.prompt_tokens)
        self.records.append(
            IterationRecord(
                clock_start=self.clock,
                latency=latency,
                batch_size=1,
                chunk_size=0,
                computed_tokens=req.prompt_tokens,
                committed_tokens=0,
                kind=IterationKind.PREFILL,
            )
        )
        self.clock += latency
        req.prefill_done_time = self.clock
        self.ready.append(req)

    def admit(self) -> None:
        if isinstance(self.policy, BlockLevelBatch) and self.round_members:
            return
        while self.ready and len(self.active) < self.scenario.max_batch:
            self.active.append(self.ready.popleft())
        if isinstance(self.policy, BlockLevelBatch) and self.active:
            self.round_members = list(self.active)
            self.round_start_block = {r.id: r.block_index for r in self.round_members}

    def _choose_chunk(self, batch_size: int) -> int:
        policy = self.policy
        assert isinstance(policy, ElasticChunk) and self.estimator is not None
        if self.estimator.observations < policy.warmup_observations:
            return policy.block_size
        c = select_chunk(
            self.estimator,
            self.cost,
            batch_size,
            policy.candidates,
            self.previous_chunk,
            policy.hysteresis,
        )
        return c

    def run_decode(self) -> None:
        policy = self.policy
        if isinstance(policy, BlockLevelBatch):
            batch = [
                r
                for r in self.round_members
                if not r.finished and r.block_index == self.round_start_block[r.id]
            ]
            recorded_batch = len(self.round_members)
        else:
            batch = list(self.active)
            recorded_batch = len(batch)

        chunk_for_record = 0
        total_computed = 0
        total_committed = 0
        first_commit: list[Request] = []
        consume = getattr(self.oracle, "consume", None)

        if isinstance(policy, AutoregressivePolicy):
            for req in batch:
                summary = ar_step(req)
                total_computed += summary.computed
                total_committed += len(summary.commits)
                if req.committed == 1:
                    first_commit.append(req)
        elif isinstance(policy, (FixedBlock, BlockLevelBatch)):
            chunk_for_record = policy.block_size
            for req in batch:
                before = req.committed
                summary = block_diffusion_step(req, self.oracle, policy.block_size)
                total_computed += summary.computed
                total_committed += len(summary.commits)
                if before == 0 and req.committed > 0:
                    first_commit.append(req)
        else:
            if isinstance(policy, ElasticChunk):
                chunk = self._choose_chunk(len(batch))
                self.previous_chunk = chunk
            else:
                chunk = policy.chunk_size
            chunk_for_record = chunk
            for req in batch:
                plan = plan_chunk(req, chunk, policy.block_size, policy.window_rule)
                commits = self.oracle.commits(req, plan.window) if plan.window else set()
                if consume is not None and commits:
                    consume(req, commits)
                before = req.committed
                apply_chunk(req, plan, commits, policy.block_size)
                total_computed += plan.computed
                total_committed += len(commits)
                if before == 0 and req.committed > 0:
                    first_commit.append(req)
                if self.estimator is not None and plan.window:
                    rank_of = {p: i for i, p in enumerate(plan.window)}
                    self.estimator.observe(
                        len(plan.window), {rank_of[p] for p in commits}
                    )

        latency = self.cost.latency(total_computed)
        self.records.append(
            IterationRecord(
                clock_start=self.clock,
                latency=latency,
                batch_size=recorded_batch,
                chunk_size=chunk_for_record,
                computed_tokens=total_computed,
                committed_tokens=total_committed,
                kind=IterationKind.DECODE,
            )
        )
        self.clock += latency

        for req in first_commit:
            req.first_token_time = self.clock
        finished = [r for r in batch if r.finished]
        for req in finished:
            req.finish_time = self.clock
            self.completed.append(req)
            self.active.remove(req)
            if self.closed and self.spawned < self.scenario.mode.total_requests:
                entry = _closed_loop_entry(
                    self.spawned, self.clock, self.wl_rng,
                    self.scenario.dataset, truncate=False,
                )
                self.spawned += 1
                self.future.append(_make_request(entry, self.scenario))

        if isinstance(policy, BlockLevelBatch) and self.round_members:
            done = all(
                r.finished or r.block_index > self.round_start_block[r.id]
                for r in self.round_members
            )
            if done:
                self.round_members = []
                self.round_start_block = {}

        if total_committed == 0:
            self.zero_streak += 1
            if self.zero_streak > self.scenario.progress_guard:
                raise DegenerateIteration(
                    f"{self.zero_streak} consecutive decode iterations committed "
                    f"nothing at clock {self.clock}"
                )
        else:
            self.zero_streak = 0

    def run(self) -> SimResult:
        while True:
            self.inject_arrivals()
            if self.pending:
                self.run_prefill()
                continue
            self.admit()
            if self.active:
                self.run_decode()
                continue
            if self.future:
                self.clock = max(self.clock, self.future[0].arrival_time)
                continue
            break
        return SimResult(records=self.records, request_log=self.completed)


def run(scenario: Scenario) -> SimResult:
    """Execute one simulation; bit-identical for identical scenario + seed."""
    return _Loop(scenario).run()


# ---------------------------------------------------------------------------
# Sweep drivers.


def trim_request_log(request_log: Sequence[Request], frac: float = 0.1) -> list[Request]:
    """Drop the first and last frac of requests by arrival (warm-up, drain)."""
    ordered = sorted(request_log, key=lambda r: (r.arrival_time, r.id))
    k = int(len(ordered) * frac)
    if len(ordered) <= 2 * k:
        return ordered
    return ordered[k : len(ordered) - k]


def summarize_trimmed(result: SimResult, frac: float = 0.1) -> RunSummary:
    """Summary over the steady-state window spanned by the kept requests."""
    kept = trim_request_log(result.request_log, frac)
    t0 = min(r.arrival_time for r in kept)
    t1 = max(r.finish_time for r in kept if r.finish_time is not None)
    records = [rec for rec in result.records if t0 <= rec.clock_start < t1]
    return summarize(records, kept)


def _row(policy: SchedulerPolicy, axis: str, value: float, summary: RunSummary) -> dict:
    return {
        "policy": policy_name(policy),
        axis: value,
        "decode_throughput": summary.decode_throughput,
        "tpot_p50": summary.tpot_p50,
        "tpot_p90": summary.tpot_p90,
        "tpot_p99": summary.tpot_p99,
        "mean_tu": summary.mean_tu,
        "mean_batch": summary.mean_batch,
        "mean_chunk": summary.mean_chunk,
        "median_chunk": summary.median_chunk,
        "completed": summary.completed,
    }


def default_cell_requests(batch_size: int) -> int:
    """Request count per closed-loop sweep cell; scales with concurrency."""
    return max(16, 2 * batch_size)


def sweep_closed_loop(
    base: Scenario,
    batch_sizes: Sequence[int],
    policies: Sequence[SchedulerPolicy],
    requests_per_cell: Callable[[int], int] = default_cell_requests,
) -> list[dict]:
    """One closed-loop run per (policy, concurrency) cell."""
    rows = []
    for policy in policies:
        for b in batch_sizes:
            scenario = replace(
                base,
                mode=ClosedLoop(concurrency=b, total_requests=requests_per_cell(b)),
                policy=policy,
            )
            result = run(scenario)
            summary = summarize(result.records, result.request_log)
            rows.append(_row(policy, "batch", b, summary))
    return rows


def sweep_open_loop(
    base: Scenario,
    rates: Sequence[float],
    policies: Optional[Sequence[SchedulerPolicy]] = None,
) -> list[dict]:
    """One open-loop run per (policy, rate), trimmed to steady state."""
    rows = []
    for policy in policies if policies is not None else [base.policy]:
        for rate in rates:
            mode = base.mode
            n = mode.num_requests if isinstance(mode, OpenLoop) else 200
            scenario = replace(
                base, mode=OpenLoop(arrival_rate=rate, num_requests=n), policy=policy
            )
            summary = summarize_trimmed(run(scenario))
            rows.append(_row(policy, "rate", rate, summary))
    return rows


def capacity_probe(
    base: Scenario, seeds: Sequence[int], num_requests: int = 300
) -> Callable[[float], float]:
    """Median-over-seeds P90 TPOT as a function of arrival rate."""

    def probe(rate: float) -> float:
        p90s = []
        for seed in seeds:
            scenario = replace(
                base,
                mode=OpenLoop(arrival_rate=rate, num_requests=num_requests),
                seed=seed,
            )
            p90s.append(summarize_trimmed(run(scenario)).tpot_p90)
        return float(np.median(p90s))

    return probe


def find_slo_capacity(
    base: Scenario,
    slo_s: float,
    rate_low: float,
    rate_high: float,
    seeds: Sequence[int] = (0, 1, 2),
    num_requests: int = 300,
    rel_tol: float = 0.02,
) -> float:
    """Largest sustainable arrival rate meeting the P90 TPOT SLO."""
    probe = capacity_probe(base, seeds, num_requests)
    return slo_capacity(probe, slo_s, rate_low, rate_high, rel_tol=rel_tol)
