"""Discrete-event simulator for diffusion-LLM serving schedules."""

from .commit import (
    CommitProfile,
    CommitTrace,
    ReplayOracle,
    StochasticOracle,
    calibrate_q,
    commit_step,
    fit_profile,
    replay_oracle,
    sample_rate_multiplier,
)
from .core import (
    ITERATION_CSV_HEADER,
    IterationKind,
    IterationRecord,
    Request,
    TokenState,
    WindowRule,
    effective_workload,
    records_from_csv,
    records_to_csv,
    token_utilization,
)
from .costmodel import (
    PROFILE_CSV_HEADER,
    CostModel,
    Segment,
    default_cost_model,
    fit,
    profile_from_csv,
    profile_to_csv,
)
from .engine import (
    ChunkPlan,
    StepSummary,
    apply_chunk,
    ar_step,
    block_diffusion_step,
    plan_chunk,
    prefix_cached_step,
    step_count_equivalence,
)
from .errors import (
    ChunkTooSmall,
    ConfigError,
    DegenerateIteration,
    EmptyRun,
    EmptyWindow,
    IllegalCommit,
    InfeasibleTarget,
    InsufficientProfile,
    NoCandidates,
    RequestComplete,
    SimulatorError,
    SingleToken,
    SloInfeasible,
    TraceExhausted,
)
from .metrics import RunSummary, nearest_rank_percentile, slo_capacity, summarize, tpot
from .scheduler import (
    AutoregressivePolicy,
    BatchingDiscipline,
    BlockLevelBatch,
    CommitEstimator,
    ElasticChunk,
    FixedBlock,
    FixedChunk,
    SchedulerPolicy,
    batching_discipline,
    policy_name,
    select_chunk,
)
from .sim import (
    ClosedLoop,
    OpenLoop,
    Scenario,
    SimResult,
    capacity_probe,
    find_slo_capacity,
    run,
    summarize_trimmed,
    sweep_closed_loop,
    sweep_open_loop,
    trim_request_log,
)
from .workload import (
    DENSE_8B,
    MOE_16B,
    PROFILES,
    VARIANTS,
    DatasetProfile,
    TraceEntry,
    calibrated_profile,
    generate_trace,
    sample_length,
    trace_from_jsonl,
    trace_to_jsonl,
)

__version__ = "0.1.0"

__all__ = [
    "AutoregressivePolicy",
    "BatchingDiscipline",
    "BlockLevelBatch",
    "ChunkPlan",
    "ChunkTooSmall",
    "ClosedLoop",
    "CommitEstimator",
    "CommitProfile",
    "CommitTrace",
    "ConfigError",
    "CostModel",
    "DatasetProfile",
    "DegenerateIteration",
    "DENSE_8B",
    "ElasticChunk",
    "EmptyRun",
    "EmptyWindow",
    "FixedBlock",
    "FixedChunk",
    "IllegalCommit",
    "InfeasibleTarget",
    "InsufficientProfile",
    "ITERATION_CSV_HEADER",
    "IterationKind",
    "IterationRecord",
    "MOE_16B",
    "NoCandidates",
    "OpenLoop",
    "PROFILE_CSV_HEADER",
    "PROFILES",
    "ReplayOracle",
    "Request",
    "RequestComplete",
    "RunSummary",
    "Scenario",
    "SchedulerPolicy",
    "Segment",
    "SimResult",
    "SimulatorError",
    "SingleToken",
    "SloInfeasible",
    "StepSummary",
    "StochasticOracle",
    "TokenState",
    "TraceEntry",
    "TraceExhausted",
    "VARIANTS",
    "WindowRule",
    "apply_chunk",
    "ar_step",
    "batching_discipline",
    "block_diffusion_step",
    "calibrate_q",
    "calibrated_profile",
    "capacity_probe",
    "commit_step",
    "default_cost_model",
    "effective_workload",
    "find_slo_capacity",
    "fit",
    "fit_profile",
    "generate_trace",
    "nearest_rank_percentile",
    "plan_chunk",
    "policy_name",
    "prefix_cached_step",
    "profile_from_csv",
    "profile_to_csv",
    "records_from_csv",
    "records_to_csv",
    "replay_oracle",
    "run",
    "sample_length",
    "sample_rate_multiplier",
    "select_chunk",
    "slo_capacity",
    "step_count_equivalence",
    "summarize",
    "summarize_trimmed",
    "sweep_closed_loop",
    "sweep_open_loop",
    "token_utilization",
    "tpot",
    "trace_from_jsonl",
    "trace_to_jsonl",
    "trim_request_log",
]
