"""Exception types raised by the simulator and its components."""


class SimulatorError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SimulatorError):
    """A scenario or experiment configuration is malformed."""


class EmptyWindow(SimulatorError):
    """A commit decision was requested for an empty decode window."""


class InfeasibleTarget(SimulatorError):
    """A calibration target lies outside the achievable range."""


class TraceExhausted(SimulatorError):
    """A replay trace has no entry for the requested step."""


class RequestComplete(SimulatorError):
    """A decode step was planned for an already-finished request."""


class IllegalCommit(SimulatorError):
    """A commit set contains positions outside the planned window."""


class InsufficientProfile(SimulatorError):
    """Too few profiling samples to fit a latency model."""


class ChunkTooSmall(SimulatorError):
    """Chunk sizes below 2 cannot make progress in streaming decode."""


class NoCandidates(SimulatorError):
    """The chunk-size candidate set is empty."""


class DegenerateIteration(SimulatorError):
    """The simulation stopped making progress."""


class EmptyRun(SimulatorError):
    """Metrics were requested for a run with no iteration records."""


class SingleToken(SimulatorError):
    """Per-token latency is undefined for requests with fewer than 2 tokens."""


class SloInfeasible(SimulatorError):
    """The latency target is violated even at the lowest probed rate."""
