from __future__ import annotations

import csv
import json

import pytest

from slotsync.cli import derive_seed, main

SMALL = """
name: small
seed: 11
horizon: {frames: 60}
nodes:
  - {id: 0, role: ap}
  - {id: 1, role: device, drift_ppm: 0.4, distance_m: 90}
schedule: {round_robin: [0, 1]}
"""


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_run_writes_outputs_and_prints_summary(scenario_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads((out / "summary.json").read_text())
    assert printed["seed"] == 11 and printed["frames_run"] == 60
    with open(out / "alignment_hist.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["bin", "count"]
    assert (out / "drift_trace.csv").read_text().startswith("frame,delta_samples\n")
    assert not list(out.glob(".*"))  # no leftover temp files


def test_run_twice_is_byte_identical(scenario_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--scenario", str(scenario_file), "--out", str(a), "--dump-trace"])
    main(["run", "--scenario", str(scenario_file), "--out", str(b), "--dump-trace"])
    assert _files(a) == _files(b) and "trace.txt" in _files(a)


def test_seed_override_changes_output(scenario_file, tmp_path):
    main(["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "a")])
    main(["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "b"), "--seed", "12"])
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert b["seed"] == 12 and a["rtt_probe"] != b["rtt_probe"]


def test_validation_failure_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(SMALL.replace("role: device", "role: ap") + "bogus: 1\n")
    assert main(["validate", "--scenario", str(p)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_validate_prints_normalized(capsys):
    assert main(["validate", "--preset", "fig8_drift"]) == 0
    assert "name: fig8_drift" in capsys.readouterr().out


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    assert "fig10_alignment" in capsys.readouterr().out


def test_sweep_errors(scenario_file, capsys):
    assert main(["sweep", "--scenario", str(scenario_file), "--sweep", "seed=1,2"]) == 2
    assert "t_adv" in capsys.readouterr().err
    assert main(["sweep", "--scenario", str(scenario_file), "--sweep", "beta="]) == 2
    assert main(["run", "--scenario", str(scenario_file), "--preset", "fig8_drift"]) == 2


def test_sweep_combined_csv_and_stable_seeds(scenario_file, tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert main(["sweep", "--scenario", str(scenario_file), "--sweep", "t_adv=2ms,5ms", "--out", str(out1)]) == 0
    main(["sweep", "--scenario", str(scenario_file), "--sweep", "t_adv=5ms", "--out", str(out2)])
    with open(out1 / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["2ms", "5ms"]
    assert rows[1]["t_adv_ns"] == "5000000"
    assert rows[1]["seed"] == str(derive_seed(11, "t_adv", "5ms"))
    # adding a sweep point leaves the other points untouched
    assert _files(out1 / "t_adv=5ms") == _files(out2 / "t_adv=5ms")


def test_strict_exit_on_invariant_failure(scenario_file, tmp_path, monkeypatch):
    from slotsync import cli
    monkeypatch.setattr(cli, "invariant_failures", lambda s: ["overlaps = 1"])
    args = ["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "o")]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 1
