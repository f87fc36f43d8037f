from __future__ import annotations

import pytest

from slotsync.config import (
    ScenarioError,
    apply_override,
    dump_scenario,
    format_duration,
    list_presets,
    load_preset,
    load_scenario,
    normalized,
    parse_duration,
)
from slotsync.errors import ConfigurationError

MINIMAL = """
name: tiny
nodes:
  - {id: 0, role: ap}
  - {id: 1, role: device, distance_m: 90}
schedule: {round_robin: [0, 1]}
horizon: {frames: 10}
"""


@pytest.mark.parametrize("text,ns", [(1500, 1500), ("1.5us", 1500), ("2ms", 2_000_000), ("1 s", 10**9),
                                     ("-12.3us", -12_300), ("7µs", 7000)])
def test_parse_duration(text, ns):
    assert parse_duration(text) == ns


@pytest.mark.parametrize("bad", ["0.5ns", "2 parsecs", True, 1.5])
def test_parse_duration_rejects(bad):
    with pytest.raises(ValueError):
        parse_duration(bad)


def test_format_duration_round_trips():
    for ns in (0, 1, 1500, 2_000_000, 10**9, 1_092_000, -12_300):
        assert parse_duration(format_duration(ns)) == ns


def test_every_preset_loads():
    names = list_presets()
    assert "fig8_drift" in names and "fig12_rtt" in names
    for name in names:
        load_preset(name)


def test_table_two_preset_slot():
    assert load_preset("fig10_alignment").phy_config().slot_ns == 1_092_000


def test_round_trip_dump_load():
    for name in list_presets():
        s = load_preset(name)
        again = load_scenario(dump_scenario(s))
        assert normalized(again) == normalized(s)


def _errors(text):
    with pytest.raises(ScenarioError) as info:
        load_scenario(text)
    return info.value.errors


def test_two_aps_named():
    errs = _errors(MINIMAL.replace("role: device", "role: ap"))
    assert any("0" in e and "1" in e and "AP" in e.upper() for e in errs)


def test_unknown_key_has_path():
    errs = _errors(MINIMAL.replace("distance_m: 90", "distance_m: 90, colour: red"))
    assert errs == ["nodes.1.colour: unknown key"]


def test_unknown_key_lenient_mode_warns():
    with pytest.warns(UserWarning):
        s = load_scenario(MINIMAL.replace("distance_m: 90", "distance_m: 90, colour: red"), strict=False)
    assert s.name == "tiny"


def test_all_errors_reported_at_once():
    text = MINIMAL.replace("round_robin: [0, 1]", "slots: {1: 0, 30: 5}") + "phy: {bandwidth_hz: 3000000}\n"
    errs = _errors(text)
    assert any(e.startswith("phy.bandwidth_hz") for e in errs)
    assert any("5" in e and e.startswith("schedule") for e in errs)
    assert len(errs) >= 2


def test_override_and_sweepable_keys():
    s = load_preset("fig12_rtt")
    assert apply_override(s, "t_adv", "10ms").jit_config(1).t_adv_override == 10_000_000
    assert apply_override(s, "jitter", "0").detection_model().jitter_samples == 0
    assert apply_override(s, "guard_samples", 80).phy.guard_samples == 80
    with pytest.raises(ConfigurationError):
        apply_override(s, "seed", 3)


def test_detection_presets():
    s = load_preset("fig10_alignment")
    assert s.detection_model().jitter_samples == 0.075
    assert load_preset("fig10_alignment_nlos").detection_model().miss_probability == 0.01


def test_readme_example_loads():
    import re
    from pathlib import Path
    text = (Path(__file__).parents[1] / "README.md").read_text()
    block = re.search(r"```yaml\n(.*?)```", text, re.S).group(1)
    s = load_scenario(block)
    assert s.name == "example" and s.propagation_to_ap(2) == (100, 120)
    assert s.jit_config(2).beta == 2 and s.host_link(2).tx.mean == 750_000
