"""Tests for dataset profiles, length sampling, and trace generation."""

import numpy as np
import pytest

from dllmsim.commit import RATE_MULTIPLIER_MAX, RATE_MULTIPLIER_MIN
from dllmsim.errors import ConfigError
from dllmsim.workload import (
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


def test_profile_catalog_shape():
    assert set(PROFILES) == {
        "sharegpt", "lmsys-chat", "longbench", "gsm8k",
        "humaneval", "mbpp", "ifeval",
    }
    for profile in PROFILES.values():
        assert set(profile.tokens_per_step) == set(VARIANTS)
        for mean, std in profile.tokens_per_step.values():
            assert 1.0 <= mean <= 32.0
            assert std >= 0.0


def test_sharegpt_moments():
    p = PROFILES["sharegpt"]
    assert (p.prompt_mean, p.prompt_std) == (213, 508)
    assert (p.output_mean, p.output_std) == (321, 214)
    assert p.tokens_per_step[DENSE_8B] == (5.29, 9.44)
    assert p.tokens_per_step[MOE_16B] == (2.51, 4.19)
    assert p.slo_tpot_s == 0.05


def test_longbench_has_relaxed_slo():
    assert PROFILES["longbench"].slo_tpot_s == 0.10


def test_dataset_profile_validation():
    with pytest.raises(ConfigError):
        DatasetProfile("bad", 0, 1, 10, 1)
    with pytest.raises(ConfigError):
        DatasetProfile("bad", 10, -1, 10, 1)


def test_calibrated_profile_matches_commit_mean():
    profile = calibrated_profile(PROFILES["sharegpt"], DENSE_8B, block_size=32)
    assert 0.0 < profile.q < 1.0
    rng = np.random.default_rng(2)
    n = 20_000
    m = np.exp(profile.rate_jitter_sigma * rng.standard_normal(n))
    m = np.clip(m, RATE_MULTIPLIER_MIN, RATE_MULTIPLIER_MAX)
    probs = np.minimum(1.0, np.outer(m, profile.q ** np.arange(1, 32)))
    commits = 1.0 + (rng.random((n, 31)) < probs).sum(axis=1)
    assert commits.mean() == pytest.approx(5.29, rel=0.02)


def test_calibrated_profile_unknown_variant():
    with pytest.raises(ConfigError):
        calibrated_profile(PROFILES["sharegpt"], "unknown-model")


def test_sample_length_degenerate_std():
    rng = np.random.default_rng(0)
    assert sample_length(100.0, 0.0, rng) == 100
    assert sample_length(0.4 + 1.0, 0.0, rng) == 1


def test_sample_length_rejects_tiny_mean():
    with pytest.raises(ConfigError):
        sample_length(0.5, 1.0, np.random.default_rng(0))


def test_sample_length_moment_recovery():
    rng = np.random.default_rng(3)
    draws = np.array([sample_length(321.0, 214.0, rng) for _ in range(30_000)])
    assert draws.min() >= 1
    assert draws.mean() == pytest.approx(321.0, rel=0.04)
    assert draws.std() == pytest.approx(214.0, rel=0.08)


def test_generate_trace_deterministic():
    profile = PROFILES["gsm8k"]
    a = generate_trace(profile, 2.0, 50, seed=7)
    b = generate_trace(profile, 2.0, 50, seed=7)
    assert a == b
    c = generate_trace(profile, 2.0, 50, seed=8)
    assert a != c


def test_generate_trace_arrivals_and_lengths():
    profile = PROFILES["gsm8k"]
    entries = generate_trace(profile, 2.0, 3000, seed=1)
    arrivals = np.array([e.arrival_s for e in entries])
    assert np.all(np.diff(arrivals) > 0)
    gaps = np.diff(np.concatenate([[0.0], arrivals]))
    assert gaps.mean() == pytest.approx(0.5, rel=0.07)
    assert all(e.prompt_tokens >= 1 and e.output_tokens >= 1 for e in entries)
    assert [e.id for e in entries] == list(range(3000))


def test_generate_trace_validation():
    profile = PROFILES["gsm8k"]
    with pytest.raises(ConfigError):
        generate_trace(profile, 0.0, 10, seed=0)
    with pytest.raises(ConfigError):
        generate_trace(profile, 1.0, 0, seed=0)


def test_trace_jsonl_roundtrip():
    entries = [TraceEntry(0, 0.25, 10, 20), TraceEntry(1, 1.5, 3, 7)]
    assert trace_from_jsonl(trace_to_jsonl(entries)) == entries
