"""Just-in-time transmit scheduling.

The host wakes ``t_adv`` before a slot boundary, as seen through its lagging
view of the radio counter, builds the packet at that moment and hands it to
the radio tagged with the boundary timestamp.  The radio holds it until the
timestamp or rejects it as late.
"""

from __future__ import annotations

import bisect
import statistics
from dataclasses import dataclass, field
from enum import Enum

from slotsync.channel import Direction, HostLink, RngStream, draw_link_delay
from slotsync.errors import ConfigurationError
from slotsync.protocol import SlotAddress
from slotsync.timebase import TimeInstant


@dataclass(frozen=True)
class RttEstimate:
    mean: int
    deviation: int
    sample_count: int

    def __post_init__(self) -> None:
        if self.deviation < 0:
            raise ValueError("RTT deviation must be non-negative")


@dataclass(frozen=True)
class JitConfig:
    beta: float = 1.0
    prep_allowance: int = 34_000
    t_adv_override: int | None = None

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if self.prep_allowance < 0:
            raise ConfigurationError("prep_allowance must be non-negative")
        if self.t_adv_override is not None and self.t_adv_override <= 0:
            raise ConfigurationError("t_adv override must be positive")


def probe_rtt(link: HostLink, n_probes: int, interval: int, rng: RngStream) -> RttEstimate:
    """PING-style probe of the host<->radio link.

    Probes are spaced ``interval`` apart, which exceeds any single delay, so
    each round trip is one independent draw per direction.
    """
    if n_probes < 2:
        raise ValueError("need at least two probes for a deviation")
    if interval <= 0:
        raise ValueError("probe interval must be positive")
    rtts = [
        draw_link_delay(link, Direction.HOST_TO_RADIO, rng) + draw_link_delay(link, Direction.RADIO_TO_HOST, rng)
        for _ in range(n_probes)
    ]
    return RttEstimate(round(statistics.fmean(rtts)), round(statistics.stdev(rtts)), n_probes)


def compute_t_adv(est: RttEstimate | None, cfg: JitConfig) -> int:
    if cfg.t_adv_override is not None:
        return cfg.t_adv_override
    if est is None:
        raise ConfigurationError("no RTT estimate and no t_adv override")
    t_adv = round(est.mean + cfg.beta * est.deviation + cfg.prep_allowance)
    if t_adv <= 0:
        raise ConfigurationError(f"computed t_adv {t_adv} ns is not positive")
    return t_adv


class TargetTooSoon(Exception):
    """The slot boundary is closer than ``t_adv``; the caller moves on to a later slot."""


def arm_tx_timer(boundary: TimeInstant, now_visible: TimeInstant, t_adv: int) -> TimeInstant:
    """Host-visible wake time for a transmission at ``boundary``.

    ``now_visible`` is the radio time as currently reported to the host, which
    lags the real counter by the receive-path delay.
    """
    if boundary - now_visible < t_adv:
        raise TargetTooSoon(boundary)
    return boundary - t_adv


@dataclass
class OwnedSlots:
    """Slots a node transmits in, repeating every frame."""

    slots: list[int]

    def __post_init__(self) -> None:
        self.slots = sorted(set(self.slots))

    def __bool__(self) -> bool:
        return bool(self.slots)

    def next_after(self, addr: SlotAddress) -> SlotAddress:
        i = bisect.bisect_right(self.slots, addr.slot)
        if i < len(self.slots):
            return SlotAddress(addr.frame, self.slots[i])
        return SlotAddress(addr.frame + 1, self.slots[0])

    def first_from(self, addr: SlotAddress) -> SlotAddress:
        """First owned slot at or after ``addr``."""
        i = bisect.bisect_left(self.slots, addr.slot)
        if i < len(self.slots):
            return SlotAddress(addr.frame, self.slots[i])
        return SlotAddress(addr.frame + 1, self.slots[0])


class EnqueueResult(str, Enum):
    ACCEPTED = "accepted"
    LATE = "late"
    CONFLICT = "conflict"


@dataclass
class RadioTxQueue:
    """Timestamped transmit queue on the radio."""

    min_lead: int = 1
    pending: dict[int, object] = field(default_factory=dict)
    late_drop_count: int = 0
    conflict_count: int = 0

    def pop(self, timestamp: int):
        return self.pending.pop(timestamp)


def radio_enqueue(queue: RadioTxQueue, packet, timestamp: int, now: int) -> EnqueueResult:
    """Accept ``packet`` for transmission at radio time ``timestamp``.

    The timestamp must lie at least ``queue.min_lead`` ns in the future; a
    timestamp equal to the current time is already late.
    """
    if timestamp < now + queue.min_lead:
        queue.late_drop_count += 1
        return EnqueueResult.LATE
    if timestamp in queue.pending:
        queue.conflict_count += 1
        return EnqueueResult.CONFLICT
    queue.pending[timestamp] = packet
    return EnqueueResult.ACCEPTED


def freshness_ok(generated_true: int, tx_true: int, t_adv: int, sample_period: int) -> bool:
    return tx_true - generated_true <= t_adv + sample_period
