"""Tests for the commit estimator, chunk selection, and policy types."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dllmsim.core import Request, TokenState, WindowRule
from dllmsim.costmodel import CostModel, Segment, default_cost_model
from dllmsim.errors import ChunkTooSmall, NoCandidates
from dllmsim.scheduler import (
    AutoregressivePolicy,
    BatchingDiscipline,
    BlockLevelBatch,
    CommitEstimator,
    ElasticChunk,
    FixedBlock,
    FixedChunk,
    batching_discipline,
    block_open,
    policy_name,
    select_chunk,
)


def flat_then_linear_model():
    # Unit latency up to 16 computed tokens, then climbing.
    return CostModel(
        segments=(
            Segment(0.0, 0.0, 1.0),
            Segment(16.0, 1.0 / 16.0, 1.0),
            Segment(32.0, 1.0 / 8.0, 2.0),
        )
    )


# ---------------------------------------------------------------------------
# Estimator.


def test_estimator_validation():
    with pytest.raises(ValueError):
        CommitEstimator(alpha=1.0)
    with pytest.raises(ValueError):
        CommitEstimator(prior_q=1.0)


def test_estimator_uses_prior_until_min_observations():
    est = CommitEstimator(window_size=8, prior_q=0.5, min_observations=2)
    assert np.allclose(est.rank_probabilities(), 0.5 ** np.arange(8))
    est.observe(8, {0})
    assert np.allclose(est.rank_probabilities(), 0.5 ** np.arange(8))
    est.observe(8, {0})
    assert not np.allclose(est.rank_probabilities(), 0.5 ** np.arange(8))


def test_estimator_ewma_arithmetic():
    est = CommitEstimator(window_size=4, alpha=0.5, min_observations=1)
    est.observe(4, {0, 2})
    assert est.hist.tolist() == [0.5, 0.0, 0.5, 0.0]
    est.observe(2, {1})
    # Ranks 2 and 3 were not exposed by the 2-wide window, so they keep
    # their previous estimates.
    assert est.hist.tolist() == [0.25, 0.5, 0.5, 0.0]


def test_estimator_hist_stays_in_unit_interval():
    est = CommitEstimator(window_size=4, alpha=0.9, min_observations=1)
    rng = np.random.default_rng(0)
    for _ in range(200):
        est.observe(4, set(np.flatnonzero(rng.random(4) < 0.5).tolist()))
    assert np.all(est.hist >= 0.0)
    assert np.all(est.hist <= 1.0)


def test_expected_commits_fixed_point_values():
    # Damped fixed point N = F(c - round(N)) computed independently.
    est = CommitEstimator(window_size=32, prior_q=0.8)
    assert est.expected_commits(2) == pytest.approx(0.9998046875, rel=1e-12)
    assert est.expected_commits(4) == pytest.approx(1.8006171875, rel=1e-12)
    assert est.expected_commits(8) == pytest.approx(3.3597379875, rel=1e-12)
    assert est.expected_commits(16) == pytest.approx(4.569080054056929, rel=1e-12)
    assert est.expected_commits(32) == pytest.approx(4.983087529346762, rel=1e-12)


def test_expected_commits_calibrated_prior():
    est = CommitEstimator(window_size=32, prior_q=0.8111977515578267)
    assert est.expected_commits(32) == pytest.approx(5.272792224083995, rel=1e-9)


def test_expected_commits_window_four():
    est = CommitEstimator(window_size=4, prior_q=0.5)
    assert est.expected_commits(2) == pytest.approx(0.99951171875, rel=1e-12)
    assert est.expected_commits(3) == pytest.approx(1.498779296875, rel=1e-12)
    assert est.expected_commits(4) == pytest.approx(1.5003662109375, rel=1e-12)


def test_expected_commits_rejects_tiny_chunk():
    with pytest.raises(ChunkTooSmall):
        CommitEstimator().expected_commits(1)


def test_expected_commits_clamped_below_chunk():
    est = CommitEstimator(window_size=8, alpha=0.0, min_observations=1)
    est.observe(8, set(range(8)))
    for c in (2, 4, 8):
        assert est.expected_commits(c) <= c - 1


# ---------------------------------------------------------------------------
# Chunk selection.


def test_select_chunk_empty_candidates():
    with pytest.raises(NoCandidates):
        select_chunk(CommitEstimator(), default_cost_model(), 1, [])


def test_select_chunk_prefers_throughput_knee():
    # Batch 2 on the capacity-16 model: chunk 8 exactly fills the cheap
    # region while larger chunks pay the slope, smaller ones waste it.
    est = CommitEstimator(window_size=16, prior_q=0.75)
    model = flat_then_linear_model()
    chosen = select_chunk(est, model, 2, [2, 4, 6, 8, 10, 12, 14, 16])
    assert chosen == 8


def test_select_chunk_ties_go_to_smaller():
    # A one-token-per-step prior makes every chunk in the flat cost region
    # equally productive, so the scan keeps the first (smallest) candidate.
    est = CommitEstimator(window_size=16, prior_q=0.0)
    model = flat_then_linear_model()
    assert select_chunk(est, model, 1, [2, 4, 8]) == 2


def test_select_chunk_hysteresis_holds_previous():
    est = CommitEstimator(window_size=16, prior_q=0.0)
    model = flat_then_linear_model()
    assert select_chunk(est, model, 1, [2, 4, 8], previous_chunk=8) == 8


def test_select_chunk_switches_on_clear_improvement():
    est = CommitEstimator(window_size=16, prior_q=0.75)
    model = flat_then_linear_model()
    assert select_chunk(est, model, 2, [2, 8], previous_chunk=2) == 8


def test_select_chunk_ignores_previous_not_in_candidates():
    est = CommitEstimator(window_size=16, prior_q=0.0)
    model = flat_then_linear_model()
    assert select_chunk(est, model, 1, [2, 4], previous_chunk=12) == 2


@given(
    scale=st.floats(min_value=0.01, max_value=100.0),
    batch=st.integers(min_value=1, max_value=64),
    prior=st.floats(min_value=0.0, max_value=0.95),
)
@settings(max_examples=50)
def test_select_chunk_scale_invariance(scale, batch, prior):
    est = CommitEstimator(window_size=32, prior_q=prior)
    base = default_cost_model()
    scaled = CostModel(
        segments=tuple(
            Segment(s.x_start, s.slope * scale, s.intercept * scale)
            for s in base.segments
        )
    )
    candidates = [2, 4, 8, 16, 32]
    assert select_chunk(est, base, batch, candidates) == select_chunk(
        est, scaled, batch, candidates
    )


# ---------------------------------------------------------------------------
# Policies.


def test_policy_validation():
    with pytest.raises(ValueError):
        FixedBlock(block_size=1)
    with pytest.raises(ValueError):
        BlockLevelBatch(block_size=1)
    with pytest.raises(ChunkTooSmall):
        FixedChunk(chunk_size=1)
    with pytest.raises(NoCandidates):
        ElasticChunk(candidates=())
    with pytest.raises(ValueError):
        ElasticChunk(block_size=16, candidates=(2, 32))


def test_policy_names():
    assert policy_name(AutoregressivePolicy()) == "ar"
    assert policy_name(FixedBlock(block_size=32)) == "fixed-block-32"
    assert policy_name(BlockLevelBatch(block_size=16)) == "block-level-batch-16"
    assert policy_name(FixedChunk(chunk_size=8)) == "fixed-chunk-8"
    assert policy_name(ElasticChunk()) == "elastic"


def test_batching_discipline():
    assert batching_discipline(BlockLevelBatch()) is BatchingDiscipline.BLOCK_LEVEL
    for policy in (AutoregressivePolicy(), FixedBlock(), FixedChunk(chunk_size=4), ElasticChunk()):
        assert batching_discipline(policy) is BatchingDiscipline.ITERATION_LEVEL


def test_block_open():
    req = Request(
        id=0, arrival_time=0.0, prompt_tokens=1, output_tokens=8,
        rng=np.random.default_rng(0),
    )
    assert not block_open(req, 4)
    req.states[0] = TokenState.DECODED_UNCACHED
    assert block_open(req, 4)


def test_elastic_defaults_cover_even_chunks():
    policy = ElasticChunk()
    assert policy.candidates == tuple(range(2, 33, 2))
    assert policy.window_rule is WindowRule.IN_BLOCK
