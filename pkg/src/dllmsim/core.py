"""Core value types shared by the decode engines, scheduler, and simulator.

Token positions are request-relative: position i is the i-th generated token,
counted from 0, independent of the prompt length.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DegenerateIteration


class TokenState(IntEnum):
    """Lifecycle of a generated token.

    Transitions are monotone: MASKED -> DECODED_UNCACHED -> DECODED_CACHED,
    never backward.  A state may be skipped (a token can go straight to
    DECODED_CACHED) but the ordering is strict.
    """

    MASKED = 0
    DECODED_UNCACHED = 1
    DECODED_CACHED = 2


class WindowRule(Enum):
    """Where a streaming decode window may draw masked positions from."""

    IN_BLOCK = "in_block"
    OUT_BLOCK = "out_block"


@dataclass(frozen=True)
class Autoregressive:
    """One token per request per iteration, committed and cached immediately."""


@dataclass(frozen=True)
class BlockDiffusion:
    """Whole-block decoding: every step recomputes the full current block."""

    block_size: int = 32

    def __post_init__(self) -> None:
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")


@dataclass(frozen=True)
class ChunkedStreaming:
    """Chunked decoding with a KV-update backlog and a masked window."""

    block_size: int = 32
    window_rule: WindowRule = WindowRule.IN_BLOCK

    def __post_init__(self) -> None:
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")


DecodeMode = Union[Autoregressive, BlockDiffusion, ChunkedStreaming]


@dataclass
class Request:
    """A single serving request and its mutable decode state."""

    id: int
    arrival_time: float
    prompt_tokens: int
    output_tokens: int
    rng: np.random.Generator
    rate_multiplier: float = 1.0
    committed: int = 0
    block_index: int = 0
    states: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    uncached_queue: deque = field(default_factory=deque, repr=False)
    steps_taken: int = 0
    prefill_done_time: Optional[float] = None
    first_token_time: Optional[float] = None
    finish_time: Optional[float] = None

    def __post_init__(self) -> None:
        if self.prompt_tokens < 1:
            raise ConfigError(f"prompt_tokens must be >= 1, got {self.prompt_tokens}")
        if self.output_tokens < 1:
            raise ConfigError(f"output_tokens must be >= 1, got {self.output_tokens}")
        if self.states is None:
            self.states = np.zeros(self.output_tokens, dtype=np.int8)

    @property
    def finished(self) -> bool:
        return self.committed >= self.output_tokens

    def block_span(self, block_size: int) -> tuple[int, int]:
        """Half-open position range of the current block, clipped to the output."""
        lo = self.block_index * block_size
        hi = min(lo + block_size, self.output_tokens)
        return lo, hi

    def advance_blocks(self, block_size: int) -> None:
        """Move block_index past every fully committed block."""
        while not self.finished:
            lo, hi = self.block_span(block_size)
            if np.all(self.states[lo:hi] != TokenState.MASKED):
                self.block_index += 1
            else:
                break


class IterationKind(Enum):
    PREFILL = "Prefill"
    DECODE = "Decode"


ITERATION_CSV_HEADER = "clock_start,latency,batch_size,chunk_size,computed_tokens,committed_tokens,kind"


@dataclass(frozen=True)
class IterationRecord:
    """One engine iteration: what ran, how long it took, what it produced."""

    clock_start: float
    latency: float
    batch_size: int
    chunk_size: int
    computed_tokens: int
    committed_tokens: int
    kind: IterationKind

    def to_csv_row(self) -> str:
        return (
            f"{self.clock_start!r},{self.latency!r},{self.batch_size},"
            f"{self.chunk_size},{self.computed_tokens},{self.committed_tokens},"
            f"{self.kind.value}"
        )


def records_to_csv(records: list[IterationRecord]) -> str:
    """Serialize iteration records with the canonical header."""
    lines = [ITERATION_CSV_HEADER]
    lines.extend(r.to_csv_row() for r in records)
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[IterationRecord]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        out.append(
            IterationRecord(
                clock_start=float(row["clock_start"]),
                latency=float(row["latency"]),
                batch_size=int(row["batch_size"]),
                chunk_size=int(row["chunk_size"]),
                computed_tokens=int(row["computed_tokens"]),
                committed_tokens=int(row["committed_tokens"]),
                kind=IterationKind(row["kind"]),
            )
        )
    return out


def token_utilization(committed: int, computed: int) -> float:
    """Fraction of computed tokens that were committed."""
    if computed < 1:
        raise DegenerateIteration("token utilization needs computed_tokens >= 1")
    if committed > computed:
        raise ValueError(f"committed ({committed}) exceeds computed ({computed})")
    return committed / computed


def effective_workload(batch_size: int, tokens_per_request: int) -> int:
    """Total tokens computed in one iteration across the batch."""
    if batch_size < 0 or tokens_per_request < 0:
        raise ValueError("batch_size and tokens_per_request must be nonnegative")
    return batch_size * tokens_per_request
