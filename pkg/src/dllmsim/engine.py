"""Per-request decode step mechanics for each decoding mode.

An engine step touches exactly one request: it decides which positions are
computed this iteration, asks the commit oracle which of them decode, and
updates token states.  Batching and timing live in the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import islice

import numpy as np

from .commit import CommitTrace, ReplayOracle
from .core import Request, TokenState, WindowRule
from .errors import ChunkTooSmall, DegenerateIteration, EmptyWindow, IllegalCommit


@dataclass(frozen=True)
class StepSummary:
    """Outcome of one engine step for one request."""

    computed: int
    commits: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class ChunkPlan:
    """Token budget split for one streaming iteration of one request."""

    kv_positions: tuple[int, ...]
    window: tuple[int, ...]

    @property
    def computed(self) -> int:
        return len(self.kv_positions) + len(self.window)


def _masked_in(request: Request, lo: int, hi: int) -> list[int]:
    span = request.states[lo:hi]
    return [lo + int(p) for p in np.nonzero(span == TokenState.MASKED)[0]]


def plan_chunk(
    request: Request,
    chunk_size: int,
    block_size: int,
    window_rule: WindowRule = WindowRule.IN_BLOCK,
) -> ChunkPlan:
    """Fill a chunk with cache-recompute backlog first, then masked positions.

    The oldest decoded-but-uncached positions take priority so cache debt is
    retired in commit order; leftover capacity becomes the decode window.
    """
    if chunk_size < 2:
        raise ChunkTooSmall(f"chunk_size must be >= 2, got {chunk_size}")
    kv = tuple(islice(request.uncached_queue, min(len(request.uncached_queue), chunk_size)))
    capacity = chunk_size - len(kv)
    if window_rule is WindowRule.IN_BLOCK:
        lo, hi = request.block_span(block_size)
        window = tuple(_masked_in(request, lo, hi)[:capacity])
    else:
        window = tuple(
            _masked_in(request, 0, request.output_tokens)[: min(capacity, block_size)]
        )
    return ChunkPlan(kv_positions=kv, window=window)


def _check_commits(request: Request, window, commits) -> None:
    allowed = set(window)
    for p in commits:
        if p not in allowed:
            raise IllegalCommit(f"position {p} not in the decode window")
        if request.states[p] != TokenState.MASKED:
            raise IllegalCommit(f"position {p} already decoded")


def apply_chunk(
    request: Request, plan: ChunkPlan, commits: set[int], block_size: int
) -> StepSummary:
    """Apply one streaming step: retire planned KV debt, then commit."""
    _check_commits(request, plan.window, commits)
    for p in plan.kv_positions:
        head = request.uncached_queue.popleft()
        if head != p:
            raise IllegalCommit(f"KV plan out of order: {head} != {p}")
        request.states[p] = TokenState.DECODED_CACHED
    for p in sorted(commits):
        request.states[p] = TokenState.DECODED_UNCACHED
        request.uncached_queue.append(p)
    request.committed += len(commits)
    request.steps_taken += 1
    request.advance_blocks(block_size)
    return StepSummary(computed=plan.computed, commits=frozenset(commits))


def block_diffusion_step(request: Request, oracle, block_size: int) -> StepSummary:
    """One full-block denoise step: the whole block extent is recomputed."""
    lo, hi = request.block_span(block_size)
    extent = hi - lo
    window = _masked_in(request, lo, hi)
    if not window:
        raise EmptyWindow(f"request {request.id} has no masked token in its block")
    commits = oracle.commits(request, window)
    _check_commits(request, window, commits)
    for p in commits:
        request.states[p] = TokenState.DECODED_UNCACHED
    if hasattr(oracle, "consume"):
        oracle.consume(request, commits)
    request.committed += len(commits)
    request.steps_taken += 1
    while np.all(request.states[lo:hi] != TokenState.MASKED):
        request.states[lo:hi] = TokenState.DECODED_CACHED
        request.advance_blocks(block_size)
        if request.finished:
            break
        lo, hi = request.block_span(block_size)
    return StepSummary(computed=extent, commits=frozenset(commits))


def prefix_cached_step(request: Request, oracle, block_size: int) -> StepSummary:
    """Block step that reuses cached positions instead of recomputing them.

    Computed tokens shrink by the block's cached count; commits enter the
    cache immediately, so each later step of the same block gets cheaper.
    """
    lo, hi = request.block_span(block_size)
    span = request.states[lo:hi]
    cached = int(np.sum(span == TokenState.DECODED_CACHED))
    uncached = int(np.sum(span == TokenState.DECODED_UNCACHED))
    window = _masked_in(request, lo, hi)
    if not window:
        raise EmptyWindow(f"request {request.id} has no masked token in its block")
    computed = (hi - lo) - cached + uncached
    commits = oracle.commits(request, window)
    _check_commits(request, window, commits)
    for p in commits:
        request.states[p] = TokenState.DECODED_CACHED
    if hasattr(oracle, "consume"):
        oracle.consume(request, commits)
    request.committed += len(commits)
    request.steps_taken += 1
    request.advance_blocks(block_size)
    return StepSummary(computed=computed, commits=frozenset(commits))


def ar_step(request: Request) -> StepSummary:
    """One autoregressive step: the next position commits and caches."""
    p = request.committed
    if p >= request.output_tokens:
        raise EmptyWindow(f"request {request.id} is already finished")
    request.states[p] = TokenState.DECODED_CACHED
    request.committed += 1
    request.steps_taken += 1
    request.advance_blocks(1)
    return StepSummary(computed=1, commits=frozenset({p}))


def step_count_equivalence(
    trace: CommitTrace,
    request: Request,
    block_size: int,
    chunk_size: int,
    window_rule: WindowRule = WindowRule.IN_BLOCK,
) -> tuple[int, int]:
    """Replay a block-decode trace through the streaming engine.

    Returns (block_steps, streaming_steps), where streaming steps count up
    to the final commit; the trailing cache flush carries no new tokens. The
    two are equal whenever chunk_size == block_size under the in-block rule,
    because a full-size chunk always holds the whole backlog plus the whole
    remaining window, so no traced step is ever split.
    """
    block_steps = len(trace.steps.get(request.id, []))
    oracle = ReplayOracle(trace, carryover=True)
    last_commit_step = -1
    guard = 10 * request.output_tokens + 100
    while not request.finished:
        if request.steps_taken > guard:
            raise DegenerateIteration(
                f"replay of request {request.id} made no progress in {guard} steps"
            )
        plan = plan_chunk(request, chunk_size, block_size, window_rule)
        commits = oracle.commits(request, plan.window)
        oracle.consume(request, commits)
        step = request.steps_taken
        apply_chunk(request, plan, commits, block_size)
        if commits:
            last_commit_step = step
    return block_steps, last_commit_step + 1
