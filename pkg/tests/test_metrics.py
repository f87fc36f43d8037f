from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotsync.protocol import SlotAddress
from slotsync.sim.metrics import MetricsReport, RttCollector, percentile, record_alignment, staircase_stats


def test_percentile_examples():
    assert percentile([1, 2, 3, 4, 5], 50) == 3
    assert percentile([7], 0.1) == 7 == percentile([7], 100)
    u = np.random.default_rng(1).uniform(size=1_000_000).tolist()
    assert percentile(u, 99) == pytest.approx(0.99, abs=0.002)


def test_percentile_errors():
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1], 0)


@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=200))
def test_percentiles_ordered(xs):
    c = RttCollector()
    for x in xs:
        c.add(x)
    s = c.summary()
    vals = [s[f"p{p}_ns"] for p in ("50", "99", "99.99", "99.9999")] + [s["max_ns"]]
    assert vals == sorted(vals) and s["max_ns"] == max(xs)


def test_sketch_past_cap():
    c = RttCollector(cap=100, bin_ns=10)
    for x in range(1000):
        c.add(x)
    assert c.sketched
    assert abs(c.percentile(50) - 499) <= 10
    assert c.percentile(100) == 999


def test_record_alignment_examples():
    r = MetricsReport()
    a = SlotAddress(3, 1)
    assert record_alignment(r, 1, a, 1000, 1000) == 0
    assert record_alignment(r, 1, a, 1000, 1600) == 6
    assert record_alignment(r, 1, a, 1000, 1050) == 0.5
    assert r.alignment_histogram() == {0: 1, 0.5: 1, 6: 1}


def test_staircase_stats():
    trace = [(k, k // 8) for k in range(1, 401)]
    s = staircase_stats(trace)
    assert s["final_delta_samples"] == 50
    assert s["first_frame_beyond_5_samples"] == 48
    assert s["step_period_frames"] == 8


def test_conservation():
    r = MetricsReport()
    r.count(1, "data_submitted", 5)
    r.count(1, "data_delivered", 3)
    r.count(1, "data_late", 1)
    r.count(1, "data_in_flight", 1)
    assert r.conservation() == {1: True}
    r.count(1, "data_submitted")
    assert r.conservation() == {1: False}
