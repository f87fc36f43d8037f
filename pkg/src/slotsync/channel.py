"""Host-radio link delays, RF propagation and packet detection.

Randomness comes from :class:`RngStream` objects keyed by
``(master_seed, node, purpose)``.  Each key maps to its own numpy
``SeedSequence`` child, so adding a node or a new purpose never shifts the
draws of an existing stream.
"""

from __future__ import annotations

import math
from functools import cached_property
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from slotsync.errors import ConfigurationError
from slotsync.timebase import SampleCounter, TimeInstant, quantize_to_sample

# 3e8 m/s makes the 90 m / 30 m testbed paths come out at exactly 300 / 100 ns.
NOMINAL_SPEED_OF_LIGHT = 300_000_000


class Purpose(int, Enum):
    HOST_TO_RADIO = 1
    RADIO_TO_HOST = 2
    DETECTION = 3
    PROBE = 4
    HOST_VIEW_LAG = 5


class RngStream:
    """Deterministic, block-buffered source of standard normals and uniforms."""

    def __init__(self, seed: int, *key: int, block: int = 4096):
        self.key = (int(seed),) + tuple(int(k) for k in key)
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._block = block
        self._normals: list[float] = []
        self._uniforms: list[float] = []

    def normal(self) -> float:
        if not self._normals:
            self._normals = self._gen.standard_normal(self._block).tolist()
            self._normals.reverse()
        return self._normals.pop()

    def uniform(self) -> float:
        if not self._uniforms:
            self._uniforms = self._gen.random(self._block).tolist()
            self._uniforms.reverse()
        return self._uniforms.pop()


class Direction(str, Enum):
    HOST_TO_RADIO = "host_to_radio"
    RADIO_TO_HOST = "radio_to_host"


DISTRIBUTIONS = ("shifted-lognormal", "truncated-normal", "constant")


@dataclass(frozen=True)
class LinkDelayModel:
    """One-way host<->radio delay.

    ``mean`` and ``deviation`` are the moments of a single one-way draw before
    any ``ceiling`` truncation.  Draws never go below ``floor``.
    """

    mean: int
    deviation: int = 0
    floor: int = 10_000
    distribution: str = "shifted-lognormal"
    ceiling: int | None = None

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigurationError(f"unknown delay distribution {self.distribution!r}")
        if self.floor <= 0:
            raise ConfigurationError("link delay floor must be positive")
        if self.deviation < 0:
            raise ConfigurationError("link delay deviation must be non-negative")
        if self.mean < self.floor:
            raise ConfigurationError(f"link delay mean {self.mean} ns is below floor {self.floor} ns")
        if self.distribution == "shifted-lognormal" and self.mean == self.floor and self.deviation:
            raise ConfigurationError("lognormal part has zero mean but non-zero deviation")
        if self.ceiling is not None and self.ceiling < max(self.floor, 1):
            raise ConfigurationError("link delay ceiling must be at least the floor")
        if self.distribution == "constant" and self.ceiling is not None and self.mean > self.ceiling:
            raise ConfigurationError("constant link delay exceeds its ceiling")

    @classmethod
    def from_rtt(cls, rtt_mean: int, rtt_deviation: int, floor: int = 10_000,
                 distribution: str = "shifted-lognormal", ceiling: int | None = None) -> LinkDelayModel:
        """Split a measured round trip equally over the two directions."""
        return cls(
            mean=round(rtt_mean / 2),
            deviation=round(rtt_deviation / math.sqrt(2)),
            floor=floor,
            distribution=distribution,
            ceiling=ceiling,
        )

    @cached_property
    def lognormal_params(self) -> tuple[float, float]:
        """(mu, sigma) of the lognormal part above the floor."""
        m = self.mean - self.floor
        if self.deviation == 0:
            return math.log(m), 0.0
        s2 = math.log1p((self.deviation / m) ** 2)
        return math.log(m) - s2 / 2, math.sqrt(s2)

    def draw(self, rng: RngStream) -> int:
        if self.distribution == "constant":
            return self.mean
        hi = self.ceiling
        for _ in range(64):
            if self.distribution == "shifted-lognormal":
                mu, sigma = self.lognormal_params
                value = self.floor + math.exp(mu + sigma * rng.normal())
            else:
                value = self.mean + self.deviation * rng.normal()
            if value >= self.floor and (hi is None or value <= hi):
                return round(value)
        # Pathological parameters: clamp instead of looping forever.
        return round(min(max(value, self.floor), hi if hi is not None else value))


@dataclass(frozen=True)
class HostLink:
    """The two directions of one node's host<->radio link."""

    tx: LinkDelayModel
    rx: LinkDelayModel

    @classmethod
    def symmetric(cls, model: LinkDelayModel) -> HostLink:
        return cls(model, model)

    def for_direction(self, direction: Direction) -> LinkDelayModel:
        return self.tx if Direction(direction) is Direction.HOST_TO_RADIO else self.rx


def draw_link_delay(model: LinkDelayModel | HostLink, direction: Direction, rng: RngStream) -> int:
    if isinstance(model, HostLink):
        model = model.for_direction(direction)
    return model.draw(rng)


def distance_to_delay(meters) -> int:
    return round(Fraction(str(meters)) * 1_000_000_000 / NOMINAL_SPEED_OF_LIGHT)


@dataclass
class PropagationModel:
    """Constant one-way RF delay for each ordered node pair, in ns."""

    delays: dict[tuple[int, int], int] = field(default_factory=dict)

    @classmethod
    def star(cls, hub: int, to_hub: dict[int, int], from_hub: dict[int, int] | None = None) -> PropagationModel:
        """Hub-and-spoke delays; symmetric unless ``from_hub`` overrides a spoke."""
        from_hub = dict(to_hub if from_hub is None else from_hub)
        delays = {}
        for node, d in to_hub.items():
            delays[(node, hub)] = int(d)
            delays[(hub, node)] = int(from_hub.get(node, d))
        return cls(delays)

    def is_symmetric(self) -> bool:
        return all(self.delays.get((b, a)) == d for (a, b), d in self.delays.items())


def propagation_delay(model: PropagationModel, src: int, dst: int) -> int:
    if src == dst:
        return 0
    try:
        return model.delays[(src, dst)]
    except KeyError:
        raise ConfigurationError(f"no propagation delay configured for {src} -> {dst}") from None


@dataclass(frozen=True)
class DetectionModel:
    miss_probability: float = 0.0
    jitter_samples: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.miss_probability <= 1.0:
            raise ConfigurationError("miss probability must lie in [0, 1]")
        if self.jitter_samples < 0:
            raise ConfigurationError("detection jitter must be non-negative")


@dataclass(frozen=True, slots=True)
class DetectionOutcome:
    detected: bool
    sample_index: int | None = None

    @classmethod
    def missed(cls) -> DetectionOutcome:
        return cls(False, None)


def detect_arrival(model: DetectionModel, true_arrival: TimeInstant, counter: SampleCounter,
                   rng: RngStream) -> DetectionOutcome:
    """First-sample detection of a packet whose leading edge hits the antenna at
    ``true_arrival`` (a time on the receiver's radio axis)."""
    if model.miss_probability and rng.uniform() < model.miss_probability:
        return DetectionOutcome.missed()
    arrival = true_arrival
    if model.jitter_samples:
        arrival = arrival + round(rng.normal() * model.jitter_samples * counter.sample_period)
        # jitter cannot push detection ahead of the stream start
        if arrival < counter.init_time:
            arrival = counter.init_time
    return DetectionOutcome(True, quantize_to_sample(counter, arrival))
