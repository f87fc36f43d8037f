"""Event engine, experiment runners and metrics."""

from slotsync.sim.engine import EVENT_KINDS, Engine
from slotsync.sim.experiments import drift_experiment, rtt_experiment, run_scenario, summarize
from slotsync.sim.metrics import MetricsReport, percentile, record_alignment, staircase_stats

__all__ = [
    "EVENT_KINDS",
    "Engine",
    "MetricsReport",
    "drift_experiment",
    "percentile",
    "record_alignment",
    "rtt_experiment",
    "run_scenario",
    "staircase_stats",
    "summarize",
]
