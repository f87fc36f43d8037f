"""Scenario files: schema, validation, normalization and presets.

Scenarios are YAML documents.  Durations may be written as integers (ns) or
as strings with a unit (``"1.154ms"``, ``"300ns"``, ``"34us"``); they are
normalized to integer nanoseconds.  Unknown keys are errors in strict mode.
"""

from __future__ import annotations

import copy
import re
import warnings
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    ValidationError,
    field_validator,
)

from slotsync.channel import DetectionModel, HostLink, LinkDelayModel, distance_to_delay
from slotsync.errors import ConfigurationError
from slotsync.jit import JitConfig
from slotsync.protocol import PhyConfig

_UNITS = {"ns": 1, "us": 1_000, "µs": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_DURATION_RE = re.compile(r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(ns|us|µs|ms|s)?\s*$")


def parse_duration(value: Any) -> int:
    """Integer nanoseconds from ``1500``, ``"1.5us"``, ``"2ms"`` and the like."""
    if isinstance(value, bool):
        raise ValueError("a duration cannot be a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"bare number {value} must be an integer count of ns")
        return int(value)
    if isinstance(value, str):
        m = _DURATION_RE.match(value)
        if not m:
            raise ValueError(f"cannot parse duration {value!r}")
        try:
            ns = Decimal(m.group(1)) * _UNITS[m.group(2) or "ns"]
        except InvalidOperation as exc:
            raise ValueError(f"cannot parse duration {value!r}") from exc
        if ns != ns.to_integral_value():
            raise ValueError(f"duration {value!r} is not a whole number of ns")
        return int(ns)
    raise ValueError(f"cannot interpret {value!r} as a duration")


def format_duration(ns: int) -> str:
    for unit, scale in (("s", 1_000_000_000), ("ms", 1_000_000), ("us", 1_000)):
        if ns and ns % scale == 0:
            return f"{ns // scale}{unit}"
    for unit, scale in (("ms", 1_000_000), ("us", 1_000)):
        if abs(ns) >= scale:
            return f"{Decimal(ns) / scale}{unit}"
    return f"{ns}ns"


Duration = Annotated[int, BeforeValidator(parse_duration)]
PpmValue = Annotated[Decimal, PlainSerializer(lambda d: float(d), return_type=float)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhySection(_Section):
    bandwidth_hz: int = 10_000_000
    payload_symbols: int = 128
    preamble_symbols: int = 4
    fft_len: int = 64
    cp_len: int = 16
    guard_samples: int = 360
    slots_per_frame: int = 19


class LinkSection(_Section):
    """Host<->radio link, given as the round trip a PING would measure."""

    distribution: Literal["shifted-lognormal", "truncated-normal", "constant"] = "shifted-lognormal"
    rtt_mean: Duration = 1_154_000
    rtt_deviation: Duration = 812_000
    floor: Duration = 10_000
    ceiling: Optional[Duration] = None


class HostSection(_Section):
    tx_prep: Duration = 20_000
    rx_decode: Duration = 150_000
    offset: Duration = 0
    drift_ppm: PpmValue = Decimal(0)


class JitSection(_Section):
    beta: float = 1.0
    prep_allowance: Duration = 34_000
    t_adv: Optional[Duration] = None


class PropagationSection(_Section):
    to_ap: Duration
    from_ap: Optional[Duration] = None


class PartialLink(_Section):
    distribution: Optional[Literal["shifted-lognormal", "truncated-normal", "constant"]] = None
    rtt_mean: Optional[Duration] = None
    rtt_deviation: Optional[Duration] = None
    floor: Optional[Duration] = None
    ceiling: Optional[Duration] = None


class PartialHost(_Section):
    tx_prep: Optional[Duration] = None
    rx_decode: Optional[Duration] = None
    offset: Optional[Duration] = None
    drift_ppm: Optional[PpmValue] = None


class PartialJit(_Section):
    beta: Optional[float] = None
    prep_allowance: Optional[Duration] = None
    t_adv: Optional[Duration] = None


class NodeSection(_Section):
    id: int
    role: Literal["ap", "device"]
    drift_ppm: PpmValue = Decimal(0)
    initial_offset: Duration = 0
    distance_m: Optional[float] = None
    propagation: Optional[PropagationSection] = None
    link: Optional[PartialLink] = None
    link_rx: Optional[PartialLink] = None
    host: Optional[PartialHost] = None
    jit: Optional[PartialJit] = None


class DefaultsSection(_Section):
    link: LinkSection = LinkSection()
    host: HostSection = HostSection()
    jit: JitSection = JitSection()


class ScheduleSection(_Section):
    round_robin: Optional[list[int]] = None
    slots: Optional[dict[int, int]] = None


class DetectionSection(_Section):
    # "none" (or null) means noise-free detection unless overridden below
    preset: Literal["los", "nlos", "none"] = "los"
    miss_probability: Optional[float] = None
    jitter_samples: Optional[float] = None

    @field_validator("preset", mode="before")
    @classmethod
    def _null_preset(cls, v):
        return "none" if v is None else v


class SyncSection(_Section):
    enabled: bool = True
    compensation: bool = True
    ewma_alpha: Optional[float] = None


class HorizonSection(_Section):
    frames: Optional[int] = None
    seconds: Optional[float] = None


class RttSection(_Section):
    initiator: int
    pairs: int


class EventSyncSection(_Section):
    period_frames: int = 10
    lead: Duration = 5_000_000
    phase: Duration = 10_000_000


class BeaconMissFault(_Section):
    node: int
    first_frame: int
    count: int


class FaultSection(_Section):
    beacon_miss: list[BeaconMissFault] = Field(default_factory=list)


class MetricsSection(_Section):
    warmup_frames: int = 5
    drift_node: Optional[int] = None
    raw_cap: int = 10_000_000
    rtt_csv_cap: int = 100_000


class ProbeSection(_Section):
    count: int = 1000
    interval: Duration = 1_000_000
    reprobe_frames: Optional[int] = None  # off: probe once at startup


class Scenario(_Section):
    name: str = "scenario"
    description: str = ""
    seed: int = 1
    phy: PhySection = PhySection()
    horizon: HorizonSection = HorizonSection(frames=1000)
    nodes: list[NodeSection]
    defaults: DefaultsSection = DefaultsSection()
    schedule: ScheduleSection = ScheduleSection()
    detection: DetectionSection = DetectionSection()
    sync: SyncSection = SyncSection()
    rtt: Optional[RttSection] = None
    event_sync: Optional[EventSyncSection] = None
    faults: FaultSection = FaultSection()
    metrics: MetricsSection = MetricsSection()
    probe: ProbeSection = ProbeSection()

    # --- resolved views used by the engine ---

    def phy_config(self) -> PhyConfig:
        return PhyConfig(**self.phy.model_dump())

    @property
    def ap(self) -> NodeSection:
        return next(n for n in self.nodes if n.role == "ap")

    @property
    def devices(self) -> list[NodeSection]:
        return [n for n in self.nodes if n.role == "device"]

    def node(self, node_id: int) -> NodeSection:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def slot_owners(self) -> dict[int, int]:
        n_slots = self.phy.slots_per_frame
        if self.schedule.slots is not None:
            return dict(sorted(self.schedule.slots.items()))
        order = self.schedule.round_robin or []
        if not order:
            return {}
        return {j: order[(j - 1) % len(order)] for j in range(1, n_slots)}

    def owned_slots(self, node_id: int) -> list[int]:
        owners = self.slot_owners()
        slots = [j for j, owner in owners.items() if owner == node_id]
        if self.node(node_id).role == "ap":
            slots = [0] + slots
        return sorted(slots)

    def horizon_frames(self) -> int:
        if self.horizon.frames is not None:
            return self.horizon.frames
        frame_ns = self.phy_config().frame_ns
        return -(-round(self.horizon.seconds * 1_000_000_000) // frame_ns)

    def _link(self, base: LinkSection, *overrides: Optional[PartialLink]) -> LinkDelayModel:
        data = base.model_dump()
        for o in overrides:
            if o is not None:
                data.update(o.model_dump(exclude_none=True))
        return LinkDelayModel.from_rtt(data["rtt_mean"], data["rtt_deviation"], data["floor"],
                                       data["distribution"], data["ceiling"])

    def host_link(self, node_id: int) -> HostLink:
        node = self.node(node_id)
        tx = self._link(self.defaults.link, node.link)
        rx = self._link(self.defaults.link, node.link, node.link_rx)
        return HostLink(tx, rx)

    def host_params(self, node_id: int) -> HostSection:
        node = self.node(node_id)
        data = self.defaults.host.model_dump()
        if node.host is not None:
            data.update(node.host.model_dump(exclude_none=True))
        return HostSection(**data)

    def jit_config(self, node_id: int) -> JitConfig:
        node = self.node(node_id)
        data = self.defaults.jit.model_dump()
        if node.jit is not None:
            data.update(node.jit.model_dump(exclude_none=True))
        return JitConfig(beta=data["beta"], prep_allowance=data["prep_allowance"],
                         t_adv_override=data["t_adv"])

    def detection_model(self) -> DetectionModel:
        d = self.detection
        base = {"miss_probability": 0.0, "jitter_samples": 0.0}
        if d.preset != "none":
            base = detection_presets()[d.preset]
        miss = base["miss_probability"] if d.miss_probability is None else d.miss_probability
        jitter = base["jitter_samples"] if d.jitter_samples is None else d.jitter_samples
        return DetectionModel(miss, jitter)

    def propagation_to_ap(self, node_id: int) -> tuple[int, int]:
        """(device -> AP, AP -> device) delay in ns."""
        node = self.node(node_id)
        if node.propagation is not None:
            to_ap = node.propagation.to_ap
            from_ap = to_ap if node.propagation.from_ap is None else node.propagation.from_ap
            return to_ap, from_ap
        d = distance_to_delay(node.distance_m or 0)
        return d, d


def detection_presets() -> dict[str, dict[str, float]]:
    """Named (miss_probability, jitter_samples) pairs from the bundled preset file."""
    global _DETECTION_CACHE
    if _DETECTION_CACHE is None:
        text = resources.files("slotsync.presets").joinpath("_detection.yaml").read_text()
        _DETECTION_CACHE = yaml.safe_load(text)
    return _DETECTION_CACHE


_DETECTION_CACHE: dict | None = None

SWEEPABLE = ("t_adv", "drift_ppm", "beta", "guard_samples", "jitter")


class ScenarioError(ConfigurationError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


def _loc(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def _semantic_errors(s: Scenario) -> list[str]:
    errs: list[str] = []
    ids = [n.id for n in s.nodes]
    seen = set()
    for i, nid in enumerate(ids):
        if nid in seen:
            errs.append(f"nodes.{i}.id: duplicate node id {nid}")
        seen.add(nid)
    aps = [n.id for n in s.nodes if n.role == "ap"]
    if len(aps) != 1:
        if aps:
            errs.append(f"nodes: exactly one AP allowed, found {len(aps)}: ids {', '.join(map(str, aps))}")
        else:
            errs.append("nodes: no node has role 'ap'")
    for i, n in enumerate(s.nodes):
        if n.role == "ap":
            if n.initial_offset != 0:
                errs.append(f"nodes.{i}.initial_offset: the AP clock is the reference and must have offset 0")
            if n.distance_m is not None or n.propagation is not None:
                errs.append(f"nodes.{i}: the AP has no propagation path to itself")
        else:
            if n.distance_m is None and n.propagation is None:
                errs.append(f"nodes.{i}: device {n.id} needs distance_m or propagation")
            if n.distance_m is not None and n.propagation is not None:
                errs.append(f"nodes.{i}: give either distance_m or propagation, not both")
            if n.distance_m is not None and n.distance_m < 0:
                errs.append(f"nodes.{i}.distance_m: must be non-negative")
        if abs(n.drift_ppm) >= 1000:
            errs.append(f"nodes.{i}.drift_ppm: {n.drift_ppm} ppm is not a crystal oscillator")

    try:
        phy = s.phy_config()
    except ConfigurationError as exc:
        field = "bandwidth_hz" if "bandwidth" in str(exc) else ""
        errs.append(f"phy{'.' + field if field else ''}: {exc}")
        phy = None

    sch = s.schedule
    if sch.round_robin is not None and sch.slots is not None:
        errs.append("schedule: give either round_robin or slots, not both")
    for owner in sch.round_robin or []:
        if owner not in seen:
            errs.append(f"schedule.round_robin: unknown node id {owner}")
    if sch.round_robin is not None and len(set(sch.round_robin)) != len(sch.round_robin):
        errs.append("schedule.round_robin: a node appears twice in the cycle")
    for slot, owner in (sch.slots or {}).items():
        if owner not in seen:
            errs.append(f"schedule.slots.{slot}: unknown node id {owner}")
        if slot == 0:
            errs.append("schedule.slots.0: slot 0 is the beacon slot")
        elif phy is not None and not 0 < slot < phy.slots_per_frame:
            errs.append(f"schedule.slots.{slot}: slot outside 1..{phy.slots_per_frame - 1}")

    if (s.horizon.frames is None) == (s.horizon.seconds is None):
        errs.append("horizon: give exactly one of frames or seconds")
    elif (s.horizon.frames or 0) < 0 or (s.horizon.seconds or 0) < 0:
        errs.append("horizon: must be non-negative")

    for nid in seen:
        for label, fn in (("link", s.host_link), ("jit", s.jit_config)):
            try:
                fn(nid)
            except ConfigurationError as exc:
                errs.append(f"node {nid} {label}: {exc}")
    try:
        s.detection_model()
    except ConfigurationError as exc:
        errs.append(f"detection: {exc}")
    if s.sync.ewma_alpha is not None and not 0 < s.sync.ewma_alpha <= 1:
        errs.append("sync.ewma_alpha: must lie in (0, 1]")

    if s.rtt is not None and len(aps) == 1 and s.rtt.initiator in seen:
        init = s.node(s.rtt.initiator)
        if init.role != "device":
            errs.append(f"rtt.initiator: node {init.id} is not a device")
        elif not s.owned_slots(init.id):
            errs.append(f"rtt.initiator: device {init.id} owns no slot")
        if len(s.owned_slots(aps[0])) < 2:
            errs.append("rtt: the AP owns no data slot to reply in")
        if s.rtt.pairs <= 0:
            errs.append("rtt.pairs: must be positive")
    elif s.rtt is not None and s.rtt.initiator not in seen:
        errs.append(f"rtt.initiator: unknown node id {s.rtt.initiator}")

    for i, f in enumerate(s.faults.beacon_miss):
        if f.node not in seen:
            errs.append(f"faults.beacon_miss.{i}.node: unknown node id {f.node}")
        if f.count < 0 or f.first_frame < 0:
            errs.append(f"faults.beacon_miss.{i}: frame and count must be non-negative")
    if s.metrics.drift_node is not None and s.metrics.drift_node not in seen:
        errs.append(f"metrics.drift_node: unknown node id {s.metrics.drift_node}")
    if s.probe.count < 2:
        errs.append("probe.count: need at least two probes")
    if s.probe.reprobe_frames is not None and s.probe.reprobe_frames <= 0:
        errs.append("probe.reprobe_frames: must be positive")
    if s.event_sync is not None and s.event_sync.period_frames <= 0:
        errs.append("event_sync.period_frames: must be positive")
    return errs


def _drop_keys(raw: Any, loc: tuple) -> None:
    node = raw
    for p in loc[:-1]:
        node = node[p]
    node.pop(loc[-1], None)


def validate_scenario(raw: dict, strict: bool = True) -> Scenario:
    """Validate a parsed scenario tree, reporting every problem at once."""
    if not isinstance(raw, dict):
        raise ScenarioError(["<root>: scenario must be a mapping"])
    raw = copy.deepcopy(raw)
    for _ in range(8):
        try:
            scenario = Scenario.model_validate(raw)
            break
        except ValidationError as exc:
            extras = [e for e in exc.errors() if e["type"] == "extra_forbidden"]
            others = [e for e in exc.errors() if e["type"] != "extra_forbidden"]
            if strict or others:
                msgs = [f"{_loc(e['loc'])}: {'unknown key' if e['type'] == 'extra_forbidden' else e['msg']}"
                        for e in exc.errors()]
                raise ScenarioError(msgs) from None
            for e in extras:
                warnings.warn(f"ignoring unknown scenario key {_loc(e['loc'])}", stacklevel=2)
                _drop_keys(raw, e["loc"])
    errs = _semantic_errors(scenario)
    if errs:
        raise ScenarioError(errs)
    return scenario


def load_scenario(source: Union[str, Path, dict], strict: bool = True) -> Scenario:
    """Load from a path, a YAML string or an already-parsed mapping."""
    if isinstance(source, dict):
        return validate_scenario(source, strict)
    if isinstance(source, Path) or ("\n" not in source and source.endswith((".yaml", ".yml"))):
        text = Path(source).read_text()
    else:
        text = source
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([f"<yaml>: {exc}"]) from None
    return validate_scenario(raw, strict)


def normalized(scenario: Scenario) -> dict:
    return scenario.model_dump(mode="json", exclude_none=True)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(normalized(scenario), sort_keys=False, allow_unicode=True)


def list_presets() -> list[str]:
    files = resources.files("slotsync.presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".yaml") and not f.name.startswith("_"))


def load_preset(name: str) -> Scenario:
    res = resources.files("slotsync.presets").joinpath(f"{name}.yaml")
    if name.startswith("_") or not res.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return load_scenario(res.read_text())


def apply_override(scenario: Scenario, key: str, value: Any) -> Scenario:
    """Copy of ``scenario`` with one sweepable parameter replaced."""
    if key not in SWEEPABLE:
        raise ConfigurationError(f"{key!r} is not sweepable; choose from {', '.join(SWEEPABLE)}")
    raw = normalized(scenario)
    if key in ("t_adv", "beta"):
        field = key
        value = parse_duration(value) if key == "t_adv" else float(value)
        raw["defaults"]["jit"][field] = value
        for node in raw["nodes"]:
            if node.get("jit"):
                node["jit"].pop(field, None)
    elif key == "drift_ppm":
        for node in raw["nodes"]:
            if node["role"] == "device":
                node["drift_ppm"] = str(value)
    elif key == "guard_samples":
        raw["phy"]["guard_samples"] = int(value)
    elif key == "jitter":
        raw["detection"]["jitter_samples"] = float(value)
    return validate_scenario(raw)


def as_fraction(value: Decimal) -> Fraction:
    return Fraction(value)
