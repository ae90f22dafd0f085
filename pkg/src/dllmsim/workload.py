"""Dataset profiles and request-trace generation.

Built-in profiles carry published length and commit-rate moments for seven
serving and benchmark datasets, each measured under two diffusion models: a
dense 8B model and a 16B mixture-of-experts model.  Traces are Poisson
arrival processes with lognormal lengths matched to those moments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .commit import CommitProfile, fit_profile
from .errors import ConfigError

DENSE_8B = "dense-8b"
MOE_16B = "moe-16b"
VARIANTS = (DENSE_8B, MOE_16B)


@dataclass(frozen=True)
class DatasetProfile:
    """Length moments plus per-model commit-rate moments for one dataset."""

    name: str
    prompt_mean: float
    prompt_std: float
    output_mean: float
    output_std: float
    tokens_per_step: dict[str, tuple[float, float]] = field(default_factory=dict)
    slo_tpot_s: float = 0.05

    def __post_init__(self) -> None:
        if self.prompt_mean < 1 or self.output_mean < 1:
            raise ConfigError("length means must be >= 1")
        if self.prompt_std < 0 or self.output_std < 0:
            raise ConfigError("length stds must be >= 0")


PROFILES: dict[str, DatasetProfile] = {
    p.name: p
    for p in (
        DatasetProfile(
            "sharegpt", 213, 508, 321, 214,
            {DENSE_8B: (5.29, 9.44), MOE_16B: (2.51, 4.19)},
        ),
        DatasetProfile(
            "lmsys-chat", 89, 133, 183, 163,
            {DENSE_8B: (4.81, 8.80), MOE_16B: (2.52, 4.84)},
        ),
        DatasetProfile(
            "longbench", 4015, 2057, 116, 138,
            {DENSE_8B: (6.06, 10.74), MOE_16B: (1.63, 1.90)},
            slo_tpot_s=0.10,
        ),
        DatasetProfile(
            "gsm8k", 89, 22, 175, 67,
            {DENSE_8B: (3.20, 5.68), MOE_16B: (2.61, 4.07)},
        ),
        DatasetProfile(
            "humaneval", 172, 65, 103, 62,
            {DENSE_8B: (3.75, 5.96), MOE_16B: (6.01, 8.51)},
        ),
        DatasetProfile(
            "mbpp", 155, 77, 49, 28,
            {DENSE_8B: (1.96, 3.33), MOE_16B: (3.34, 4.81)},
        ),
        DatasetProfile(
            "ifeval", 58, 24, 281, 264,
            {DENSE_8B: (1.88, 3.90), MOE_16B: (1.28, 1.74)},
        ),
    )
}


def calibrated_profile(
    dataset: DatasetProfile, variant: str = DENSE_8B, block_size: int = 32
) -> CommitProfile:
    """Commit profile whose window-block_size moments match the dataset's."""
    if variant not in dataset.tokens_per_step:
        raise ConfigError(
            f"profile {dataset.name!r} has no variant {variant!r}; "
            f"known: {sorted(dataset.tokens_per_step)}"
        )
    mean, std = dataset.tokens_per_step[variant]
    return fit_profile(
        block_size, mean, std, note=f"{dataset.name}/{variant} block {block_size}"
    )


def sample_length(mean: float, std: float, rng: np.random.Generator) -> int:
    """Lognormal token count matched to (mean, std), rounded, at least 1.

    Method of moments: sigma^2 = ln(1 + (std/mean)^2), mu = ln(mean) - sigma^2/2.
    """
    if mean < 1:
        raise ConfigError(f"mean must be >= 1, got {mean}")
    if std == 0:
        return max(1, round(mean))
    sigma2 = np.log(1.0 + (std / mean) ** 2)
    mu = np.log(mean) - sigma2 / 2.0
    draw = rng.lognormal(mean=mu, sigma=np.sqrt(sigma2))
    return max(1, round(draw))


@dataclass(frozen=True)
class TraceEntry:
    """One request in an arrival trace."""

    id: int
    arrival_s: float
    prompt_tokens: int
    output_tokens: int


def generate_trace(
    profile: DatasetProfile, rate: float, n_requests: int, seed: int
) -> list[TraceEntry]:
    """Poisson arrivals at the given rate with profile-matched lengths."""
    if rate <= 0:
        raise ConfigError(f"arrival rate must be > 0, got {rate}")
    if n_requests < 1:
        raise ConfigError(f"n_requests must be >= 1, got {n_requests}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    entries = []
    clock = 0.0
    for rid in range(n_requests):
        clock += rng.exponential(1.0 / rate)
        prompt = sample_length(profile.prompt_mean, profile.prompt_std, rng)
        output = sample_length(profile.output_mean, profile.output_std, rng)
        entries.append(TraceEntry(rid, clock, prompt, output))
    return entries


def trace_to_jsonl(entries: list[TraceEntry]) -> str:
    lines = [
        json.dumps(
            {
                "id": e.id,
                "arrival_s": e.arrival_s,
                "prompt_tokens": e.prompt_tokens,
                "output_tokens": e.output_tokens,
            }
        )
        for e in entries
    ]
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str) -> list[TraceEntry]:
    entries = []
    for line in text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        entries.append(
            TraceEntry(
                id=int(row["id"]),
                arrival_s=float(row["arrival_s"]),
                prompt_tokens=int(row["prompt_tokens"]),
                output_tokens=int(row["output_tokens"]),
            )
        )
    return entries
