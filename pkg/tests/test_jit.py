from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotsync.channel import HostLink, LinkDelayModel, RngStream
from slotsync.errors import ConfigurationError
from slotsync.jit import (
    EnqueueResult,
    JitConfig,
    OwnedSlots,
    RadioTxQueue,
    RttEstimate,
    TargetTooSoon,
    arm_tx_timer,
    compute_t_adv,
    freshness_ok,
    probe_rtt,
    radio_enqueue,
)
from slotsync.protocol import SlotAddress
from slotsync.timebase import Axis, TimeInstant

R = Axis.radio(1)


def test_probe_constant_link():
    link = HostLink.symmetric(LinkDelayModel(577_000, distribution="constant"))
    est = probe_rtt(link, 100, 5_000_000, RngStream(1))
    assert (est.mean, est.deviation) == (1_154_000, 0)
    assert probe_rtt(link, 2, 5_000_000, RngStream(1)).deviation == 0


def test_probe_calibrated_link():
    link = HostLink.symmetric(LinkDelayModel.from_rtt(1_154_000, 812_000))
    est = probe_rtt(link, 10_000, 5_000_000, RngStream(2))
    assert abs(est.mean / 1_154_000 - 1) < 0.02
    assert abs(est.deviation / 812_000 - 1) < 0.10


def test_probe_needs_two():
    link = HostLink.symmetric(LinkDelayModel(577_000, distribution="constant"))
    with pytest.raises(ValueError):
        probe_rtt(link, 1, 1, RngStream(1))


def test_t_adv_examples():
    assert compute_t_adv(RttEstimate(1_154_000, 812_000, 1000), JitConfig()) == 2_000_000
    assert compute_t_adv(RttEstimate(1_154_000, 812_000, 1000), JitConfig(0, 0)) == 1_154_000
    assert compute_t_adv(RttEstimate(1, 1, 2), JitConfig(t_adv_override=10_000_000)) == 10_000_000
    with pytest.raises(ConfigurationError):
        compute_t_adv(None, JitConfig())


def test_arm_examples():
    now = TimeInstant(0, R)
    assert arm_tx_timer(TimeInstant(10_000_000, R), now, 2_000_000).ticks == 8_000_000
    with pytest.raises(TargetTooSoon):
        arm_tx_timer(TimeInstant(1_000_000, R), now, 2_000_000)


def test_skip_rearms_next_frame():
    owned = OwnedSlots([3])
    assert owned.next_after(SlotAddress(4, 3)) == SlotAddress(5, 3)
    assert owned.first_from(SlotAddress(4, 3)) == SlotAddress(4, 3)
    assert OwnedSlots([2, 5]).next_after(SlotAddress(0, 2)) == SlotAddress(0, 5)


def test_wake_equals_boundary_minus_link_delays():
    # with beta = allowance = 0 and a constant link, T_adv is the bare round trip
    link = HostLink.symmetric(LinkDelayModel(577_000, distribution="constant"))
    t_adv = compute_t_adv(probe_rtt(link, 10, 5_000_000, RngStream(1)), JitConfig(0, 0))
    s = TimeInstant(50_000_000, R)
    assert arm_tx_timer(s, TimeInstant(0, R), t_adv).ticks == s.ticks - 577_000 - 577_000


@pytest.mark.parametrize("ts,result", [(1_000_000, EnqueueResult.ACCEPTED), (-1, EnqueueResult.LATE),
                                       (0, EnqueueResult.LATE)])
def test_enqueue_examples(ts, result):
    q = RadioTxQueue(min_lead=1)
    assert radio_enqueue(q, "p", ts, 0) is result


def test_enqueue_conflict_and_counts():
    q = RadioTxQueue(min_lead=100)
    assert radio_enqueue(q, "a", 500, 0) is EnqueueResult.ACCEPTED
    assert radio_enqueue(q, "b", 500, 0) is EnqueueResult.CONFLICT
    assert radio_enqueue(q, "c", 99, 0) is EnqueueResult.LATE
    assert (q.conflict_count, q.late_drop_count) == (1, 1)
    assert q.pop(500) == "a"


@given(lead=st.integers(1, 10_000), now=st.integers(0, 10**12), ts=st.integers(0, 10**12))
def test_enqueue_rule(lead, now, ts):
    q = RadioTxQueue(min_lead=lead)
    late = radio_enqueue(q, None, ts, now) is EnqueueResult.LATE
    assert late == (ts < now + lead)


def test_freshness():
    assert freshness_ok(0, 2_000_100, 2_000_000, 100)
    assert not freshness_ok(0, 2_000_101, 2_000_000, 100)
