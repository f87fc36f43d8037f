"""Scenario runners and the structured summary emitted by the CLI."""

from __future__ import annotations

from collections import Counter

from slotsync.config import Scenario, apply_override, normalized, validate_scenario
from slotsync.sim.engine import Engine
from slotsync.sim.metrics import MetricsReport, staircase_stats


def run_scenario(config: Scenario, master_seed: int | None = None, trace: bool = False) -> MetricsReport:
    return Engine(config, master_seed, trace=trace).run()


def _with(config: Scenario, **sections) -> Scenario:
    raw = normalized(config)
    for key, value in sections.items():
        raw[key] = value
    return validate_scenario(raw)


def drift_experiment(config: Scenario, n_frames: int, master_seed: int | None = None) -> list[tuple[int, int]]:
    """Beacon timing drift of the drift node with re-anchoring frozen after its first beacon."""
    sync = dict(normalized(config)["sync"], enabled=False)
    scenario = _with(config, horizon={"frames": n_frames + 1}, sync=sync)
    return run_scenario(scenario, master_seed).drift_trace


def rtt_experiment(config: Scenario, t_adv, n_pairs: int, master_seed: int | None = None) -> dict:
    if config.rtt is None:
        raise ValueError("scenario has no rtt section naming the initiator")
    scenario = apply_override(config, "t_adv", t_adv)
    scenario = _with(scenario, rtt={"initiator": config.rtt.initiator, "pairs": n_pairs})
    report = run_scenario(scenario, master_seed)
    return dict(report.rtt.summary(), pairs=report.rtt_pairs, stopped_early=report.stopped_early)


def _alignment_stats(values: list) -> dict:
    n = len(values)
    if not n:
        return {"count": 0}
    hist = Counter(values)
    return {
        "count": n,
        "frac_0": hist.get(0, 0) / n,
        "frac_le_1": sum(c for v, c in hist.items() if v <= 1) / n,
        "mode": max(sorted(hist), key=lambda v: hist[v]),
        "max": max(values),
    }


def summarize(report: MetricsReport, scenario: Scenario, seed: int | None = None) -> dict:
    """JSON-ready summary; keys are strings and values are plain numbers."""
    out: dict = {
        "scenario": scenario.name,
        "seed": scenario.seed if seed is None else seed,
        "frames_run": report.frames_run,
        "end_time_ns": report.end_time_ns,
        "stopped_early": report.stopped_early,
        "t_adv_ns": {str(k): v for k, v in sorted(report.t_adv.items())},
        "rtt_probe": {str(k): v for k, v in sorted(report.rtt_estimates.items())},
    }
    out["alignment"] = {str(k): _alignment_stats(v) for k, v in sorted(report.alignment.items())}
    if report.drift_trace:
        out["drift"] = staircase_stats(report.drift_trace)
    if report.rtt.count:
        out["rtt"] = dict(report.rtt.summary(), pairs=report.rtt_pairs)
    if report.event_fires:
        n_dev = len(scenario.devices)
        spreads = report.event_sync_spreads(min_nodes=n_dev)
        out["event_sync"] = {
            "events": len(spreads),
            "max_spread_ns": max(spreads) if spreads else None,
            "max_spread_samples": max(spreads) / report.sample_period if spreads else None,
        }
    out["counters"] = {str(k): dict(sorted(c.items())) for k, c in sorted(report.counters.items())}
    conservation = report.conservation()
    out["invariants"] = {
        "freshness_violations": report.freshness_violations,
        "max_tx_minus_generation_ns": {str(k): v for k, v in sorted(report.freshness_max.items())},
        "overlaps": report.overlaps,
        "eq9_violations": report.eq9_violations,
        "conservation_ok": all(conservation.values()),
    }
    return out


def invariant_failures(summary: dict) -> list[str]:
    inv = summary["invariants"]
    failures = []
    for key in ("freshness_violations", "overlaps", "eq9_violations"):
        if inv[key]:
            failures.append(f"{key} = {inv[key]}")
    if not inv["conservation_ok"]:
        failures.append("packet conservation does not balance")
    return failures
