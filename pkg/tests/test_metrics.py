"""Tests for run statistics and the SLO capacity search."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dllmsim.core import IterationKind, IterationRecord, Request
from dllmsim.errors import ConfigError, EmptyRun, SingleToken, SloInfeasible
from dllmsim.metrics import (
    RunSummary,
    nearest_rank_percentile,
    slo_capacity,
    summarize,
    tpot,
)


def make_request(committed, first, finish, rid=0):
    req = Request(
        id=rid, arrival_time=0.0, prompt_tokens=1,
        output_tokens=max(committed, 1), rng=np.random.default_rng(0),
    )
    req.committed = committed
    req.first_token_time = first
    req.finish_time = finish
    return req


def decode_record(latency, batch, chunk, computed, committed, clock=0.0):
    return IterationRecord(
        clock_start=clock, latency=latency, batch_size=batch, chunk_size=chunk,
        computed_tokens=computed, committed_tokens=committed,
        kind=IterationKind.DECODE,
    )


# ---------------------------------------------------------------------------
# Per-request TPOT.


def test_tpot_arithmetic():
    assert tpot(make_request(5, 1.0, 2.0)) == pytest.approx(0.25)


def test_tpot_needs_two_tokens():
    with pytest.raises(SingleToken):
        tpot(make_request(1, 1.0, 2.0))


def test_tpot_needs_timing_marks():
    req = make_request(5, 1.0, 2.0)
    req.finish_time = None
    with pytest.raises(SingleToken):
        tpot(req)


# ---------------------------------------------------------------------------
# Percentiles.


def test_nearest_rank_enumerated():
    values = [10.0, 1.0, 9.0, 2.0, 8.0, 3.0, 7.0, 4.0, 6.0, 5.0]
    assert nearest_rank_percentile(values, 50) == 5.0
    assert nearest_rank_percentile(values, 90) == 9.0
    assert nearest_rank_percentile(values, 99) == 10.0
    assert nearest_rank_percentile(values, 100) == 10.0
    assert nearest_rank_percentile([3.5], 50) == 3.5


def test_nearest_rank_validation():
    with pytest.raises(EmptyRun):
        nearest_rank_percentile([], 50)
    with pytest.raises(ValueError):
        nearest_rank_percentile([1.0], 0)
    with pytest.raises(ValueError):
        nearest_rank_percentile([1.0], 101)


@given(
    values=st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=40),
    pct=st.floats(min_value=1.0, max_value=100.0),
)
@settings(max_examples=80)
def test_nearest_rank_matches_inverted_cdf(values, pct):
    got = nearest_rank_percentile(values, pct)
    expected = float(np.quantile(np.array(values), pct / 100.0, method="inverted_cdf"))
    assert got == expected
    assert got in values


# ---------------------------------------------------------------------------
# Run summaries.


def test_run_summary_validation():
    kwargs = dict(
        decode_throughput=1.0, mean_tu=0.5, mean_batch=1.0,
        mean_chunk=8.0, median_chunk=8.0, completed=1,
    )
    with pytest.raises(ValueError):
        RunSummary(tpot_p50=0.2, tpot_p90=0.1, tpot_p99=0.3, **kwargs)
    with pytest.raises(ValueError):
        RunSummary(
            tpot_p50=0.1, tpot_p90=0.2, tpot_p99=0.3,
            decode_throughput=1.0, mean_tu=1.5, mean_batch=1.0,
            mean_chunk=8.0, median_chunk=8.0, completed=1,
        )


def test_summarize_handcrafted_run():
    records = [
        IterationRecord(0.0, 1.0, 1, 0, 100, 0, IterationKind.PREFILL),
        decode_record(0.5, 2, 8, 64, 10, clock=1.0),
        decode_record(0.5, 2, 4, 36, 8, clock=1.5),
    ]
    requests = [
        make_request(11, 1.0, 2.0, rid=0),
        make_request(6, 1.5, 2.0, rid=1),
    ]
    summary = summarize(records, requests)
    assert summary.decode_throughput == pytest.approx(18.0)
    assert summary.mean_tu == pytest.approx(0.18)
    assert summary.mean_batch == pytest.approx(2.0)
    assert summary.mean_chunk == pytest.approx(6.0)
    assert summary.median_chunk == pytest.approx(4.0)
    assert summary.tpot_p50 == pytest.approx(0.1)
    assert summary.completed == 2
    parsed = json.loads(summary.to_json())
    assert set(parsed) == {
        "decode_throughput", "tpot_p50", "tpot_p90", "tpot_p99",
        "mean_tu", "mean_batch", "mean_chunk", "median_chunk", "completed",
    }


def test_summarize_skips_single_token_requests():
    records = [decode_record(1.0, 1, 0, 10, 5)]
    requests = [make_request(1, 0.5, 1.0, rid=0), make_request(4, 0.5, 1.0, rid=1)]
    summary = summarize(records, requests)
    assert summary.completed == 2
    assert summary.tpot_p50 == pytest.approx(0.5 / 3)


def test_summarize_empty_cases():
    with pytest.raises(EmptyRun):
        summarize([], [make_request(5, 0.0, 1.0)])
    with pytest.raises(EmptyRun):
        summarize([decode_record(1.0, 1, 0, 10, 5)], [])
    with pytest.raises(EmptyRun):
        summarize([decode_record(1.0, 1, 0, 10, 5)], [make_request(1, 0.0, 1.0)])


def test_summarize_ar_runs_report_zero_chunk():
    records = [decode_record(1.0, 1, 0, 10, 10)]
    summary = summarize(records, [make_request(4, 0.5, 1.0)])
    assert summary.mean_chunk == 0.0
    assert summary.median_chunk == 0.0


# ---------------------------------------------------------------------------
# SLO capacity search.


def knee_probe(knee, floor=0.01, slo=0.05):
    """P90 grows quadratically and crosses the SLO exactly at the knee."""

    def probe(rate):
        return floor + (slo - floor) * (rate / knee) ** 2

    return probe


def test_slo_capacity_finds_knee():
    cap = slo_capacity(knee_probe(20.0), 0.05, 1.0, 64.0, rel_tol=0.02)
    assert 20.0 * 0.97 <= cap <= 20.0
    assert knee_probe(20.0)(cap) <= 0.05


def test_slo_capacity_monotone_in_slo():
    lo = slo_capacity(knee_probe(20.0), 0.03, 1.0, 64.0)
    hi = slo_capacity(knee_probe(20.0), 0.05, 1.0, 64.0)
    assert lo < hi


def test_slo_capacity_infeasible_at_low_bound():
    with pytest.raises(SloInfeasible):
        slo_capacity(knee_probe(0.5), 0.05, 1.0, 64.0)


def test_slo_capacity_unconstrained_cases():
    assert slo_capacity(knee_probe(20.0), math.inf, 1.0, 64.0) == 64.0
    assert slo_capacity(lambda r: 0.0, 0.05, 1.0, 64.0) == 64.0


def test_slo_capacity_bound_validation():
    with pytest.raises(ConfigError):
        slo_capacity(knee_probe(20.0), 0.05, 0.0, 64.0)
    with pytest.raises(ConfigError):
        slo_capacity(knee_probe(20.0), 0.05, 8.0, 4.0)
