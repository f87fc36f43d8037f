"""Command-line front end: run scenarios and sweeps, list and validate presets."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from slotsync.config import (
    SWEEPABLE,
    Scenario,
    ScenarioError,
    apply_override,
    dump_scenario,
    list_presets,
    load_preset,
    load_scenario,
)
from slotsync.errors import ConfigurationError
from slotsync.sim.experiments import invariant_failures, run_scenario, summarize
from slotsync.sim.metrics import MetricsReport

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2

SWEEP_COLUMNS = (
    "key", "value", "seed", "frames_run", "t_adv_ns",
    "alignment_count", "alignment_frac_0", "alignment_frac_le_1", "alignment_max",
    "rtt_pairs", "rtt_p50_ns", "rtt_p99_ns", "rtt_p99.99_ns", "rtt_max_ns",
    "data_submitted", "data_late", "late_rate", "drift_final_samples",
    "event_sync_max_spread_ns", "freshness_violations", "overlaps",
)


def write_atomic(path: Path, text: str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_text(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def write_outputs(out: Path, scenario: Scenario, report: MetricsReport, summary: dict) -> None:
    write_atomic(out / "summary.json", summary_text(summary))
    write_atomic(out / "scenario.yaml", dump_scenario(scenario))
    devices = {n.id for n in scenario.devices}
    hist = report.alignment_histogram(devices)
    write_atomic(out / "alignment_hist.csv", _csv(("bin", "count"), sorted(hist.items())))
    write_atomic(out / "drift_trace.csv", _csv(("frame", "delta_samples"), report.drift_trace))
    if report.rtt.count:
        cap = scenario.metrics.rtt_csv_cap
        write_atomic(out / "rtt_samples.csv", _csv(("rtt_ns",), ((v,) for v in report.rtt.raw[:cap])))
    if report.trace is not None:
        write_atomic(out / "trace.txt", "\n".join(report.trace) + "\n")


def derive_seed(master: int, key: str, value: str) -> int:
    """Per-point seed; depends only on (master, key, value)."""
    digest = hashlib.sha256(f"{master}:{key}:{value}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _sweep_row(key: str, value: str, seed: int, summary: dict) -> dict:
    devices = [v for k, v in summary["alignment"].items() if v.get("count") and k != "0"]
    count = sum(d["count"] for d in devices)
    counters = summary["counters"].values()
    submitted = sum(c.get("data_submitted", 0) for c in counters)
    late = sum(c.get("data_late", 0) for c in counters)
    rtt = summary.get("rtt", {})
    row = {
        "key": key, "value": value, "seed": seed,
        "frames_run": summary["frames_run"],
        "t_adv_ns": max(summary["t_adv_ns"].values()),
        "alignment_count": count,
        "alignment_frac_0": sum(d["frac_0"] * d["count"] for d in devices) / count if count else "",
        "alignment_frac_le_1": sum(d["frac_le_1"] * d["count"] for d in devices) / count if count else "",
        "alignment_max": max((d["max"] for d in devices), default=""),
        "rtt_pairs": rtt.get("pairs", 0),
        "rtt_p50_ns": rtt.get("p50_ns", ""),
        "rtt_p99_ns": rtt.get("p99_ns", ""),
        "rtt_p99.99_ns": rtt.get("p99.99_ns", ""),
        "rtt_max_ns": rtt.get("max_ns", ""),
        "data_submitted": submitted,
        "data_late": late,
        "late_rate": late / submitted if submitted else "",
        "drift_final_samples": summary.get("drift", {}).get("final_delta_samples", ""),
        "event_sync_max_spread_ns": (summary.get("event_sync") or {}).get("max_spread_ns", ""),
        "freshness_violations": summary["invariants"]["freshness_violations"],
        "overlaps": summary["invariants"]["overlaps"],
    }
    return row


def _run_point(scenario: Scenario, seed: int, trace: bool) -> tuple[MetricsReport, dict]:
    report = run_scenario(scenario, seed, trace=trace)
    return report, summarize(report, scenario, seed)


def _sweep_point(args) -> tuple[str, int, dict]:
    scenario, key, value, seed, out, trace = args
    point = apply_override(scenario, key, value)
    report, summary = _run_point(point, seed, trace)
    write_outputs(out / f"{key}={value}", point, report, summary)
    return value, seed, summary


def parse_sweep(spec: str) -> tuple[str, list[str]]:
    if "=" not in spec:
        raise ConfigurationError(f"--sweep expects KEY=V1,V2,... got {spec!r}")
    key, _, values = spec.partition("=")
    key = key.strip()
    if key not in SWEEPABLE:
        raise ConfigurationError(f"{key!r} is not sweepable; sweepable keys: {', '.join(SWEEPABLE)}")
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigurationError(f"--sweep {key}= has an empty value list")
    return key, vals


def _load(args) -> Scenario:
    if bool(args.scenario) == bool(args.preset):
        raise ConfigurationError("give exactly one of --scenario or --preset")
    scenario = load_preset(args.preset) if args.preset else load_scenario(Path(args.scenario))
    if getattr(args, "t_adv", None):
        scenario = apply_override(scenario, "t_adv", args.t_adv)
    return scenario


def cmd_run(args) -> int:
    scenario = _load(args)
    if args.sweep:
        return _do_sweep(args, scenario, args.sweep)
    seed = scenario.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else Path("results") / scenario.name
    report, summary = _run_point(scenario, seed, args.dump_trace)
    write_outputs(out, scenario, report, summary)
    sys.stdout.write(summary_text(summary))
    return _check(args, summary)


def cmd_sweep(args) -> int:
    return _do_sweep(args, _load(args), args.sweep)


def _do_sweep(args, scenario: Scenario, spec: str) -> int:
    key, values = parse_sweep(spec)
    for v in values:  # fail fast on a bad value before any run
        apply_override(scenario, key, v)
    master = scenario.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else Path("results") / f"{scenario.name}-sweep-{key}"
    jobs = [(scenario, key, v, derive_seed(master, key, v), out, args.dump_trace) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [_sweep_row(key, v, seed, summary) for v, seed, summary in results]
    write_atomic(out / "sweep.csv", _csv(SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in rows)))
    sys.stdout.write(_csv(SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in rows)))
    status = EXIT_OK
    for v, _, summary in results:
        if _check(args, summary, label=f"{key}={v}"):
            status = EXIT_INVARIANT
    return status


def _check(args, summary: dict, label: str = "") -> int:
    failures = invariant_failures(summary)
    for f in failures:
        print(f"invariant violated{' [' + label + ']' if label else ''}: {f}", file=sys.stderr)
    return EXIT_INVARIANT if failures and args.strict else EXIT_OK


def cmd_presets(args) -> int:
    for name in list_presets():
        desc = " ".join(load_preset(name).description.split())
        print(f"{name:24s} {desc}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = _load(args)
    sys.stdout.write(dump_scenario(scenario))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--scenario", metavar="PATH", help="scenario YAML file")
    source.add_argument("--preset", metavar="NAME", help="bundled preset (see `slotsync presets`)")

    runopts = argparse.ArgumentParser(add_help=False)
    runopts.add_argument("--seed", type=int, help="master seed (default: the scenario's)")
    runopts.add_argument("--out", metavar="DIR", help="output directory")
    runopts.add_argument("--t-adv", metavar="DURATION", help="fix T_adv on every node, e.g. 2ms")
    runopts.add_argument("--dump-trace", action="store_true", help="write the per-event trace")
    runopts.add_argument("--strict", action="store_true",
                         help="exit nonzero when a run breaks a checked invariant")
    runopts.add_argument("--jobs", type=int, default=1, help="parallel sweep points")

    p = sub.add_parser("run", parents=[source, runopts], help="run one scenario")
    p.add_argument("--sweep", metavar="KEY=V1,V2,...", help="run once per value instead")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[source, runopts], help="run a parameter sweep")
    p.add_argument("--sweep", metavar="KEY=V1,V2,...", required=True,
                   help=f"sweepable keys: {', '.join(SWEEPABLE)}")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("presets", help="list bundled presets")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("validate", parents=[source], help="validate and print the normalized scenario")
    p.add_argument("--t-adv", metavar="DURATION")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print("scenario is invalid:", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
