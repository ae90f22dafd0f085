"""Chunk selection and batch admission policies.

The elastic policy tracks how often each window rank commits, predicts the
steady-state commits per iteration for each candidate chunk size, and picks
the candidate with the best committed-tokens-per-second under the current
batch, with hysteresis so noise does not cause thrashing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import Request, TokenState, WindowRule
from .costmodel import CostModel
from .errors import ChunkTooSmall, NoCandidates


class CommitEstimator:
    """EWMA estimate of the commit probability at each window rank.

    Rank 0 is the earliest masked position in the window; it always commits.
    Until enough steps have been observed, a geometric prior with decay
    prior_q stands in for the empirical histogram.
    """

    def __init__(
        self,
        window_size: int = 32,
        alpha: float = 0.95,
        prior_q: float = 0.8,
        min_observations: int = 8,
    ):
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {alpha}")
        if not 0.0 <= prior_q < 1.0:
            raise ValueError(f"prior_q must be in [0, 1), got {prior_q}")
        self.window_size = window_size
        self.alpha = alpha
        self.prior_q = prior_q
        self.min_observations = min_observations
        self.hist = np.zeros(window_size, dtype=float)
        self.observations = 0

    def observe(self, window_size: int, committed_ranks: Iterable[int]) -> None:
        """Fold one decode step into the histogram.

        Only ranks the window actually exposed are updated; shorter windows
        carry no evidence about the deeper ranks.
        """
        ranks = set(committed_ranks)
        seen = min(window_size, self.window_size)
        for rank in range(seen):
            hit = 1.0 if rank in ranks else 0.0
            self.hist[rank] = self.alpha * self.hist[rank] + (1.0 - self.alpha) * hit
        self.observations += 1

    def rank_probabilities(self) -> np.ndarray:
        if self.observations < self.min_observations:
            return self.prior_q ** np.arange(self.window_size)
        return self.hist.copy()

    def expected_commits(self, chunk_size: int) -> float:
        """Steady-state commits per iteration at a given chunk size.

        In steady state the chunk splits into last step's commits (cache
        recompute) and the decode window, so the commit count N solves
        N = F(chunk_size - round(N)) where F is the cumulative rank mass.
        Solved by a damped fixed-point iteration.
        """
        if chunk_size < 2:
            raise ChunkTooSmall(f"chunk_size must be >= 2, got {chunk_size}")
        probs = self.rank_probabilities()
        cum = np.concatenate([[0.0], np.cumsum(probs)])

        def mass(window: int) -> float:
            window = max(1, min(window, self.window_size))
            return float(cum[window])

        n = 0.0
        for _ in range(10):
            n = n + 0.5 * (mass(chunk_size - int(round(n))) - n)
        return float(np.clip(n, 0.0, chunk_size - 1))


def select_chunk(
    estimator: CommitEstimator,
    cost_model: CostModel,
    batch_size: int,
    candidates: Sequence[int],
    previous_chunk: Optional[int] = None,
    hysteresis: float = 0.05,
) -> int:
    """Pick the chunk size with the best committed tokens per second.

    The rate for a candidate c is expected_commits(c) * batch_size divided
    by the iteration latency at batch_size * c computed tokens.  The
    previous choice is kept unless the best candidate beats it by more than
    the hysteresis margin; exact ties go to the smaller chunk.
    """
    if not candidates:
        raise NoCandidates("candidate chunk list is empty")

    def rate(c: int) -> float:
        return (
            estimator.expected_commits(c)
            * batch_size
            / cost_model.latency(batch_size * c)
        )

    best_c = None
    best_rate = -1.0
    for c in sorted(candidates):
        r = rate(c)
        if r > best_rate:
            best_c, best_rate = c, r
    assert best_c is not None
    if previous_chunk is not None and previous_chunk in candidates:
        if best_rate <= rate(previous_chunk) * (1.0 + hysteresis):
            return previous_chunk
    return best_c


# ---------------------------------------------------------------------------
# Policy configuration.


@dataclass(frozen=True)
class AutoregressivePolicy:
    """One token per request per iteration; the baseline decoder."""


@dataclass(frozen=True)
class FixedBlock:
    """Whole-block diffusion decode with iteration-level batching."""

    block_size: int = 32

    def __post_init__(self) -> None:
        if self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")


@dataclass(frozen=True)
class BlockLevelBatch:
    """Whole-block decode where the batch only changes at block boundaries.

    Members that finish their current block idle (zero computed tokens)
    until every member has finished the block.
    """

    block_size: int = 32

    def __post_init__(self) -> None:
        if self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")


@dataclass(frozen=True)
class FixedChunk:
    """Streaming chunked decode with a constant chunk size."""

    chunk_size: int
    block_size: int = 32
    window_rule: WindowRule = WindowRule.IN_BLOCK

    def __post_init__(self) -> None:
        if self.chunk_size < 2:
            raise ChunkTooSmall(f"chunk_size must be >= 2, got {self.chunk_size}")


@dataclass(frozen=True)
class ElasticChunk:
    """Streaming chunked decode that re-selects the chunk size every iteration.

    The first warmup_observations request-steps run at chunk = block_size so
    the estimator sees full windows before elastic control engages.
    """

    block_size: int = 32
    candidates: tuple[int, ...] = tuple(range(2, 33, 2))
    hysteresis: float = 0.05
    warmup_observations: int = 32
    alpha: float = 0.95
    min_observations: int = 8
    window_rule: WindowRule = WindowRule.IN_BLOCK

    def __post_init__(self) -> None:
        if not self.candidates:
            raise NoCandidates("candidate chunk list is empty")
        if any(not 2 <= c <= self.block_size for c in self.candidates):
            raise ValueError("candidates must lie in [2, block_size]")


SchedulerPolicy = Union[
    AutoregressivePolicy, FixedBlock, BlockLevelBatch, FixedChunk, ElasticChunk
]


def policy_name(policy: SchedulerPolicy) -> str:
    """Stable label used in sweep tables and output filenames."""
    if isinstance(policy, AutoregressivePolicy):
        return "ar"
    if isinstance(policy, FixedBlock):
        return f"fixed-block-{policy.block_size}"
    if isinstance(policy, BlockLevelBatch):
        return f"block-level-batch-{policy.block_size}"
    if isinstance(policy, FixedChunk):
        return f"fixed-chunk-{policy.chunk_size}"
    return "elastic"


class BatchingDiscipline(Enum):
    """When waiting requests may join the running batch."""

    ITERATION_LEVEL = "iteration"
    BLOCK_LEVEL = "block"


def batching_discipline(policy: SchedulerPolicy) -> BatchingDiscipline:
    if isinstance(policy, BlockLevelBatch):
        return BatchingDiscipline.BLOCK_LEVEL
    return BatchingDiscipline.ITERATION_LEVEL


def block_open(request: Request, block_size: int) -> bool:
    """Whether the request is mid-block (some but not all positions decoded)."""
    lo, hi = request.block_span(block_size)
    span = request.states[lo:hi]
    return bool(np.any(span != TokenState.MASKED))
