"""Integer-nanosecond clocks and sample counting.

Every node carries three views of time: the global true time that orders
simulation events, its radio front-end counter, and its host operating-system
clock.  All of them are affine images of true time with a constant offset and a
constant rational skew, evaluated in exact integer arithmetic.

Instants carry the axis they were read from, so mixing a radio timestamp of one
node with the true time of the engine raises :class:`AxisMismatchError` instead
of silently producing a wrong difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from slotsync.errors import (
    AxisMismatchError,
    BeforeStreamStartError,
    ClockOverflowError,
    ConfigurationError,
)

NS_PER_SECOND = 1_000_000_000
TICK_LIMIT = 2**63
PPM = 1_000_000


@dataclass(frozen=True, slots=True)
class Axis:
    kind: str
    node: int | None = None

    def __str__(self) -> str:
        return self.kind if self.node is None else f"{self.kind}[{self.node}]"

    @classmethod
    def radio(cls, node: int) -> Axis:
        return cls("radio", node)

    @classmethod
    def host(cls, node: int) -> Axis:
        return cls("host", node)


TRUE = Axis("true")


def _check_range(ticks: int) -> int:
    if not -TICK_LIMIT <= ticks < TICK_LIMIT:
        raise ClockOverflowError(f"tick value {ticks} outside signed 64-bit range")
    return ticks


def _round_div(num: int, den: int) -> int:
    """Nearest-integer quotient, halves rounded toward +inf (den > 0)."""
    return (2 * num + den) // (2 * den)


@dataclass(frozen=True, slots=True, order=False)
class TimeInstant:
    """A point on one clock axis, in integer nanoseconds."""

    ticks: int
    axis: Axis = TRUE

    def _same_axis(self, other: TimeInstant) -> None:
        if self.axis != other.axis:
            raise AxisMismatchError(f"cannot combine {self.axis} with {other.axis} time")

    def __add__(self, duration: int) -> TimeInstant:
        if isinstance(duration, TimeInstant):
            raise TypeError("adding two instants is meaningless; add a duration in ns")
        return TimeInstant(self.ticks + int(duration), self.axis)

    __radd__ = __add__

    def __sub__(self, other: Union[TimeInstant, int]):
        if isinstance(other, TimeInstant):
            self._same_axis(other)
            return self.ticks - other.ticks
        return TimeInstant(self.ticks - int(other), self.axis)

    def __lt__(self, other: TimeInstant) -> bool:
        self._same_axis(other)
        return self.ticks < other.ticks

    def __le__(self, other: TimeInstant) -> bool:
        self._same_axis(other)
        return self.ticks <= other.ticks

    def __gt__(self, other: TimeInstant) -> bool:
        self._same_axis(other)
        return self.ticks > other.ticks

    def __ge__(self, other: TimeInstant) -> bool:
        self._same_axis(other)
        return self.ticks >= other.ticks

    def __repr__(self) -> str:
        return f"TimeInstant({self.ticks}ns @ {self.axis})"


def as_ppm(value) -> Fraction:
    """Exact rational from an int, float, decimal string or Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # repr gives the shortest decimal that round-trips, e.g. 0.6 -> "0.6"
        return Fraction(repr(value))
    return Fraction(str(value))


@dataclass(frozen=True)
class ClockModel:
    """Affine map from true time to a local clock.

    ``local = offset + epoch + (true - epoch) * (1 + drift_ppm * 1e-6)``,
    rounded to the nearest nanosecond.
    """

    offset: int = 0
    drift_ppm: Fraction = Fraction(0)
    epoch: TimeInstant = TimeInstant(0, TRUE)
    axis: Axis = field(default_factory=lambda: Axis.radio(0))

    def __post_init__(self) -> None:
        ppm = as_ppm(self.drift_ppm)
        if abs(ppm) >= PPM:
            raise ConfigurationError(f"drift {ppm} ppm makes the clock non-monotone")
        if self.epoch.axis != TRUE:
            raise AxisMismatchError("clock epoch must be given on the true axis")
        object.__setattr__(self, "drift_ppm", ppm)
        object.__setattr__(self, "offset", int(self.offset))
        # skew = delta * num / den
        object.__setattr__(self, "_num", ppm.numerator)
        object.__setattr__(self, "_den", ppm.denominator * PPM)

    # Raw integer paths, used by the event engine's hot loop.
    def local_ns(self, true_ns: int) -> int:
        e = self.epoch.ticks
        delta = true_ns - e
        skew = _round_div(delta * self._num, self._den) if self._num else 0
        return _check_range(self.offset + e + delta + skew)

    def true_ns(self, local_ns: int) -> int:
        e = self.epoch.ticks
        x = local_ns - self.offset - e
        if not self._num:
            return _check_range(e + x)
        return _check_range(e + _round_div(x * self._den, self._den + self._num))

    def offset_at(self, true_ns: int) -> int:
        """Local minus true time at the given instant."""
        return self.local_ns(true_ns) - true_ns


def radio_time_of(clock: ClockModel, true_time: TimeInstant) -> TimeInstant:
    if true_time.axis != TRUE:
        raise AxisMismatchError(f"expected true time, got {true_time.axis}")
    return TimeInstant(clock.local_ns(true_time.ticks), clock.axis)


def true_time_of(clock: ClockModel, radio_time: TimeInstant) -> TimeInstant:
    if radio_time.axis != clock.axis:
        raise AxisMismatchError(f"clock reads {clock.axis}, got {radio_time.axis}")
    return TimeInstant(clock.true_ns(radio_time.ticks), TRUE)


def sample_period_for(bandwidth_hz: int) -> int:
    """Sample period in ns; the bandwidth must divide one second exactly."""
    bandwidth_hz = int(bandwidth_hz)
    if bandwidth_hz <= 0 or NS_PER_SECOND % bandwidth_hz:
        raise ConfigurationError(
            f"bandwidth {bandwidth_hz} Hz does not give an integer sample period in ns"
        )
    return NS_PER_SECOND // bandwidth_hz


@dataclass
class SampleCounter:
    """Counts received samples from the first timestamped one.

    ``init_time`` is the radio timestamp attached to the first sample of the
    receive stream; sample ``n`` was taken at ``init_time + n * sample_period``.
    """

    init_time: TimeInstant
    sample_period: int
    count: int = 0

    def __post_init__(self) -> None:
        if self.sample_period <= 0:
            raise ConfigurationError("sample period must be positive")
        if self.init_time.axis.kind != "radio":
            raise AxisMismatchError("sample counter must be anchored on a radio axis")

    def advance_to(self, sample_index: int) -> None:
        if sample_index < self.count:
            raise ValueError(f"sample counter cannot go back from {self.count} to {sample_index}")
        self.count = sample_index


def sample_arrival_time(counter: SampleCounter, sample_index: int) -> TimeInstant:
    if sample_index < 0:
        raise ValueError("sample index must be non-negative")
    return counter.init_time + sample_index * counter.sample_period


def quantize_to_sample(counter: SampleCounter, radio_time: TimeInstant) -> int:
    """Nearest sample index; exact half-sample ties go to the later sample."""
    elapsed = radio_time - counter.init_time
    if elapsed < 0:
        raise BeforeStreamStartError(
            f"{radio_time!r} precedes stream start {counter.init_time!r}"
        )
    p = counter.sample_period
    return (2 * elapsed + p) // (2 * p)


@dataclass(frozen=True)
class HostClock:
    """Host operating-system clock; only ever used to stamp packets for RTT."""

    clock: ClockModel

    def now(self, true_time: TimeInstant) -> TimeInstant:
        return radio_time_of(self.clock, true_time)

    def now_ns(self, true_ns: int) -> int:
        return self.clock.local_ns(true_ns)
