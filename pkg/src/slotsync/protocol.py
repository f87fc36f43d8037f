"""TDMA frame structure, beacon handling, three-way delay/offset estimation and
event synchronization.

Sign convention: ``o_est`` is the device clock minus the AP clock.  A device
whose radio counter reads 5 us ahead of the AP has ``o_est == +5000``.  With
that convention the device computes the AP time as ``local - o_est`` and fires
an event scheduled for AP time ``t_E`` at local time ``t_E + o_est``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Union

from slotsync.errors import AxisMismatchError, ConfigurationError, NotSynchronizedError
from slotsync.timebase import (
    Axis,
    SampleCounter,
    TimeInstant,
    sample_arrival_time,
    sample_period_for,
)


@dataclass(frozen=True)
class PhyConfig:
    bandwidth_hz: int = 10_000_000
    payload_symbols: int = 128
    preamble_symbols: int = 4
    fft_len: int = 64
    cp_len: int = 16
    guard_samples: int = 360
    slots_per_frame: int = 19

    def __post_init__(self) -> None:
        sample_period_for(self.bandwidth_hz)
        for name in ("payload_symbols", "preamble_symbols", "cp_len", "guard_samples"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.fft_len <= 0:
            raise ConfigurationError("fft_len must be positive")
        if self.cp_len > self.fft_len:
            raise ConfigurationError("cyclic prefix cannot exceed the FFT length")
        if self.slots_per_frame < 2:
            raise ConfigurationError("a frame needs the beacon slot plus at least one data slot")
        if self.slot_samples <= 0:
            raise ConfigurationError("slot must contain at least one sample")

    @property
    def sample_period(self) -> int:
        return sample_period_for(self.bandwidth_hz)

    @property
    def packet_samples(self) -> int:
        return (self.payload_symbols + self.preamble_symbols) * (self.fft_len + self.cp_len)

    @property
    def slot_samples(self) -> int:
        return self.packet_samples + self.guard_samples

    @property
    def slot_ns(self) -> int:
        return self.slot_samples * self.sample_period

    @property
    def frame_ns(self) -> int:
        return self.slots_per_frame * self.slot_ns

    @property
    def packet_ns(self) -> int:
        return self.packet_samples * self.sample_period


def slot_duration(phy: PhyConfig) -> int:
    """Slot length in ns."""
    return phy.slot_ns


@dataclass(frozen=True, order=True, slots=True)
class SlotAddress:
    frame: int
    slot: int

    @property
    def is_beacon(self) -> bool:
        return self.slot == 0

    def index(self, phy: PhyConfig) -> int:
        """Absolute slot number counted from frame 0, slot 0."""
        return self.frame * phy.slots_per_frame + self.slot

    @classmethod
    def from_index(cls, index: int, phy: PhyConfig) -> SlotAddress:
        frame, slot = divmod(index, phy.slots_per_frame)
        return cls(frame, slot)


# --- wire formats ----------------------------------------------------------

_BEACON_HEAD = struct.Struct("<qqHH")
_FEEDBACK = struct.Struct("<Hqq")
_DIRECTIVE = struct.Struct("<HH")
_DATA_HEAD = struct.Struct("<HHqHqqBqI")

FLAG_REQUEST = 0x01
FLAG_REPLY = 0x02


@dataclass(frozen=True, slots=True)
class Feedback:
    """AP reception time ``t02`` of the uplink the device stamped ``tx_radio_time``."""

    device_id: int
    tx_radio_time: int
    t02: int


@dataclass(frozen=True)
class BeaconPayload:
    frame: int
    tx_radio_time: int
    feedback: tuple[Feedback, ...] = ()
    directives: tuple[tuple[int, int], ...] = ()

    def feedback_for(self, device_id: int) -> Feedback | None:
        for fb in self.feedback:
            if fb.device_id == device_id:
                return fb
        return None

    def to_bytes(self) -> bytes:
        parts = [_BEACON_HEAD.pack(self.frame, self.tx_radio_time, len(self.feedback), len(self.directives))]
        parts += [_FEEDBACK.pack(f.device_id, f.tx_radio_time, f.t02) for f in self.feedback]
        parts += [_DIRECTIVE.pack(slot, owner) for slot, owner in self.directives]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> BeaconPayload:
        frame, tx, nfb, ndir = _BEACON_HEAD.unpack_from(data, 0)
        pos = _BEACON_HEAD.size
        fbs = []
        for _ in range(nfb):
            fbs.append(Feedback(*_FEEDBACK.unpack_from(data, pos)))
            pos += _FEEDBACK.size
        dirs = []
        for _ in range(ndir):
            dirs.append(_DIRECTIVE.unpack_from(data, pos))
            pos += _DIRECTIVE.size
        if pos != len(data):
            raise ValueError(f"{len(data) - pos} trailing bytes after beacon payload")
        return cls(frame, tx, tuple(fbs), tuple(dirs))


@dataclass(frozen=True)
class DataPacketPayload:
    sender: int
    dest: int
    frame: int
    slot: int
    tx_radio_time: int
    host_tx_time: int
    flags: int = 0
    seq: int = 0
    app: bytes = b""

    def to_bytes(self) -> bytes:
        head = _DATA_HEAD.pack(self.sender, self.dest, self.frame, self.slot, self.tx_radio_time,
                               self.host_tx_time, self.flags, self.seq, len(self.app))
        return head + self.app

    @classmethod
    def from_bytes(cls, data: bytes) -> DataPacketPayload:
        sender, dest, frame, slot, tx, host, flags, seq, n = _DATA_HEAD.unpack_from(data, 0)
        app = bytes(data[_DATA_HEAD.size:_DATA_HEAD.size + n])
        if _DATA_HEAD.size + n != len(data):
            raise ValueError("data payload length field does not match buffer")
        return cls(sender, dest, frame, slot, tx, host, flags, seq, app)


# --- synchronization state -------------------------------------------------


class Anchor(NamedTuple):
    frame: int
    arrival: int  # device radio ns of the beacon's first sample


class PtpEstimate(NamedTuple):
    delay: int
    offset: int
    clamped: bool


@dataclass
class SyncState:
    """What a device knows about the AP's slot grid."""

    node_id: int
    axis: Axis = None
    ap_id: int = 0
    anchor: Anchor | None = None
    d_est: int | None = None
    o_est: int | None = None
    last_beacon: tuple[int, int] | None = None  # (t1 on device axis, s00 on AP axis)
    pending: dict[int, tuple[int, int]] = field(default_factory=dict)
    frozen: bool = False
    ewma_alpha: float | None = None
    stale_beacons: int = 0
    negative_delay_clamps: int = 0
    ptp_rounds: int = 0

    def __post_init__(self) -> None:
        if self.axis is None:
            self.axis = Axis.radio(self.node_id)

    @property
    def synchronized(self) -> bool:
        return self.anchor is not None

    def boundary_ns(self, frame: int, slot: int, phy: PhyConfig, compensate: bool) -> int:
        if self.anchor is None:
            raise NotSynchronizedError(f"device {self.node_id} has not received a beacon")
        k, arrival = self.anchor
        s = arrival + ((frame - k) * phy.slots_per_frame + slot) * phy.slot_ns
        if compensate:
            if self.d_est is None:
                raise NotSynchronizedError(f"device {self.node_id} has no delay estimate yet")
            s -= 2 * self.d_est
        return s

    def note_transmission(self, tx_radio_time: int, keep: int = 64) -> None:
        """Remember which beacon the uplink stamped ``tx_radio_time`` pairs with."""
        if self.last_beacon is None:
            return
        self.pending[tx_radio_time] = self.last_beacon
        if len(self.pending) > keep:
            del self.pending[min(self.pending)]


def compute_slot_boundary(state: SyncState, target: SlotAddress, phy: PhyConfig,
                          compensate: bool) -> TimeInstant:
    if state.anchor is not None and target.frame < state.anchor.frame:
        raise ValueError(f"target frame {target.frame} precedes anchor frame {state.anchor.frame}")
    return TimeInstant(state.boundary_ns(target.frame, target.slot, phy, compensate), state.axis)


@dataclass
class ApState:
    """The AP side: its own grid origin plus the latest uplink reception per device."""

    phy: PhyConfig
    origin: int = 0
    node_id: int = 0
    feedback: dict[int, Feedback] = field(default_factory=dict)
    directives: tuple[tuple[int, int], ...] = ()

    @property
    def axis(self) -> Axis:
        return Axis.radio(self.node_id)

    def boundary_ns(self, frame: int, slot: int) -> int:
        return self.origin + (frame * self.phy.slots_per_frame + slot) * self.phy.slot_ns

    def observe_uplink(self, device_id: int, tx_radio_time: int, rx_radio_time: int) -> None:
        self.feedback[device_id] = Feedback(device_id, tx_radio_time, rx_radio_time)


def ap_make_beacon(ap_state: ApState, k: int) -> tuple[BeaconPayload, TimeInstant]:
    if k < 0:
        raise ValueError("frame index must be non-negative")
    tx = ap_state.boundary_ns(k, 0)
    fb = tuple(ap_state.feedback[d] for d in sorted(ap_state.feedback))
    payload = BeaconPayload(k, tx, fb, ap_state.directives)
    return payload, TimeInstant(tx, ap_state.axis)


TimeLike = Union[TimeInstant, int]


def _ticks(t: TimeLike) -> int:
    return t.ticks if isinstance(t, TimeInstant) else int(t)


def ptp_update(t1: TimeLike, s00k: TimeLike, sijl: TimeLike, t02: TimeLike) -> PtpEstimate:
    """Delay and offset from one completed beacon / uplink / echo exchange.

    ``t1`` and ``sijl`` are read on the device clock, ``s00k`` and ``t02`` on
    the AP clock.  Assumes equal delay in both directions.
    """
    if isinstance(t1, TimeInstant) and isinstance(sijl, TimeInstant) and t1.axis != sijl.axis:
        raise AxisMismatchError("t1 and sijl must both be device-clock readings")
    if isinstance(s00k, TimeInstant) and isinstance(t02, TimeInstant) and s00k.axis != t02.axis:
        raise AxisMismatchError("s00k and t02 must both be AP-clock readings")
    t1, s00k, sijl, t02 = _ticks(t1), _ticks(s00k), _ticks(sijl), _ticks(t02)
    twice_d = t1 + t02 - s00k - sijl
    twice_o = t1 - t02 - s00k + sijl
    d = (twice_d + 1) // 2
    o = (twice_o + 1) // 2
    if d < 0:
        return PtpEstimate(0, o, True)
    return PtpEstimate(d, o, False)


def device_on_beacon(state: SyncState, payload: BeaconPayload, arrival_sample: int,
                     counter: SampleCounter) -> SyncState:
    """Slot alignment on a detected beacon; completes a pending exchange if the
    beacon echoes one of this device's uplinks."""
    if state.anchor is not None and payload.frame <= state.anchor.frame:
        state.stale_beacons += 1
        return state
    if state.anchor is not None and state.frozen:
        return state
    counter.advance_to(arrival_sample)
    arrival = sample_arrival_time(counter, arrival_sample).ticks

    fb = payload.feedback_for(state.node_id)
    if fb is not None and fb.tx_radio_time in state.pending:
        t1, s00 = state.pending[fb.tx_radio_time]
        est = ptp_update(t1, s00, fb.tx_radio_time, fb.t02)
        if est.clamped:
            state.negative_delay_clamps += 1
        # Only the delay is smoothed: it is physically constant, while the
        # offset moves with oscillator drift and must track it.
        a = state.ewma_alpha
        if a is None or state.d_est is None:
            state.d_est = est.delay
        else:
            state.d_est = round(a * est.delay + (1 - a) * state.d_est)
        state.o_est = est.offset
        state.ptp_rounds += 1
        for sent in [s for s in state.pending if s <= fb.tx_radio_time]:
            del state.pending[sent]

    state.anchor = Anchor(payload.frame, arrival)
    state.last_beacon = (arrival, payload.tx_radio_time)
    return state


def estimate_ap_time(state: SyncState, local_radio_time: TimeInstant) -> TimeInstant:
    if state.o_est is None:
        raise NotSynchronizedError(f"device {state.node_id} has no clock-offset estimate")
    if local_radio_time.axis != state.axis:
        raise AxisMismatchError(f"expected {state.axis} time, got {local_radio_time.axis}")
    return TimeInstant(local_radio_time.ticks - state.o_est, Axis.radio(state.ap_id))


def schedule_synchronized_event(state: SyncState, t_event: TimeInstant | int) -> TimeInstant:
    """Local radio time at which to fire an event due at AP time ``t_event``."""
    if state.o_est is None:
        raise NotSynchronizedError(f"device {state.node_id} has no clock-offset estimate")
    return TimeInstant(_ticks(t_event) + state.o_est, state.axis)


def drift_metric(t0: TimeLike, k: int, observed: TimeLike, phy: PhyConfig) -> Fraction:
    """Expected minus observed beacon timestamp, in samples."""
    if k < 0:
        raise ValueError("frame index must be non-negative")
    expected = _ticks(t0) + k * phy.frame_ns
    return Fraction(expected - _ticks(observed), phy.sample_period)
