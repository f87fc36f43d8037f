"""Metric collection and nearest-rank percentiles."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

REPORTED_PERCENTILES = ("50", "99", "99.99", "99.9999")


def percentile(samples, p) -> float | int:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    p = Fraction(str(p))
    if not 0 < p <= 100:
        raise ValueError(f"percentile {p} outside (0, 100]")
    ordered = sorted(samples)
    if not ordered:
        raise ValueError("percentile of an empty sample set")
    rank = math.ceil(p * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


def _sorted_percentile(ordered, p) -> float | int:
    rank = math.ceil(Fraction(str(p)) * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


class RttCollector:
    """Keeps raw RTT samples up to ``cap``; past that, folds everything into a
    fixed-width histogram and answers percentiles from it."""

    def __init__(self, cap: int = 10_000_000, bin_ns: int = 1_000):
        self.cap = cap
        self.bin_ns = bin_ns
        self.raw: list[int] = []
        self.bins: Counter[int] | None = None
        self.count = 0
        self.max = None

    @property
    def sketched(self) -> bool:
        return self.bins is not None

    def add(self, rtt: int) -> None:
        self.count += 1
        if self.max is None or rtt > self.max:
            self.max = rtt
        if self.bins is None:
            self.raw.append(rtt)
            if len(self.raw) > self.cap:
                self.bins = Counter(v // self.bin_ns for v in self.raw)
        else:
            self.bins[rtt // self.bin_ns] += 1

    def percentile(self, p) -> int:
        if not self.count:
            raise ValueError("no RTT samples")
        if self.bins is None:
            return percentile(self.raw, p)
        rank = max(math.ceil(Fraction(str(p)) * self.count / 100), 1)
        seen = 0
        for b in sorted(self.bins):
            seen += self.bins[b]
            if seen >= rank:
                # upper edge of the bin, never above the true maximum
                return min((b + 1) * self.bin_ns - 1, self.max)
        return self.max

    def summary(self) -> dict:
        if not self.count:
            return {"count": 0}
        out = {"count": self.count, "sketched": self.sketched}
        if self.bins is None:
            ordered = sorted(self.raw)
            for p in REPORTED_PERCENTILES:
                out[f"p{p}_ns"] = _sorted_percentile(ordered, p)
            out["mean_ns"] = round(sum(ordered) / len(ordered))
        else:
            for p in REPORTED_PERCENTILES:
                out[f"p{p}_ns"] = self.percentile(p)
        out["max_ns"] = self.max
        return out


def _samples(diff_ns: int, sample_period: int):
    q, r = divmod(abs(diff_ns), sample_period)
    return q if r == 0 else abs(diff_ns) / sample_period


@dataclass
class MetricsReport:
    sample_period: int = 100
    drift_node: int | None = None
    drift_trace: list[tuple[int, int | float]] = field(default_factory=list)
    alignment: dict[int, list] = field(default_factory=lambda: defaultdict(list))
    rtt: RttCollector = field(default_factory=RttCollector)
    event_fires: dict[int, dict[int, int]] = field(default_factory=lambda: defaultdict(dict))
    counters: dict[int, Counter] = field(default_factory=lambda: defaultdict(Counter))
    freshness_max: dict[int, int] = field(default_factory=dict)  # worst tx - generation, true ns
    freshness_violations: int = 0
    overlaps: int = 0
    eq9_violations: int = 0
    t_adv: dict[int, int] = field(default_factory=dict)
    rtt_estimates: dict[int, dict] = field(default_factory=dict)
    frames_run: int = 0
    end_time_ns: int = 0
    stopped_early: bool = False
    rtt_pairs: int = 0
    trace: list[str] | None = None

    def count(self, node: int, name: str, n: int = 1) -> None:
        self.counters[node][name] += n

    # --- derived views ---

    def alignment_histogram(self, nodes=None) -> dict:
        hist = Counter()
        for node, values in self.alignment.items():
            if nodes is None or node in nodes:
                hist.update(values)
        return dict(sorted(hist.items()))

    def event_sync_spreads(self, min_nodes: int = 2) -> list[int]:
        """Spread of true firing times per event that at least ``min_nodes`` fired."""
        by_event = defaultdict(list)
        for node, fires in self.event_fires.items():
            for event_id, t in fires.items():
                by_event[event_id].append(t)
        return [max(ts) - min(ts) for _, ts in sorted(by_event.items()) if len(ts) >= max(min_nodes, 2)]

    def conservation(self) -> dict[int, bool]:
        """Per node: submitted == delivered + late + missed + conflicts + in flight."""
        out = {}
        for node, c in self.counters.items():
            if not c.get("data_submitted"):
                continue
            accounted = (c["data_delivered"] + c["data_late"] + c["data_missed"]
                         + c["data_conflict"] + c["data_in_flight"])
            out[node] = accounted == c["data_submitted"]
        return out


def record_alignment(report: MetricsReport, node: int, addr, expected: int, observed: int) -> int | float:
    """Append |expected - observed| in samples for a packet from ``node``."""
    value = _samples(expected - observed, report.sample_period)
    report.alignment[node].append(value)
    return value


def staircase_stats(trace: list[tuple[int, int | float]]) -> dict:
    """First-crossing and step-period statistics of a drift trace."""
    if not trace:
        return {}
    sign = 1 if trace[-1][1] >= 0 else -1
    first_reach: dict[int, int] = {}
    top = 0
    for frame, delta in trace:
        level = math.floor(sign * delta)
        while top < level:
            top += 1
            first_reach[top] = frame
    out = {
        "final_frame": trace[-1][0],
        "final_delta_samples": trace[-1][1],
        "max_abs_delta_samples": max(abs(d) for _, d in trace),
    }
    beyond_5 = next((f for f, d in trace if abs(d) > 5), None)
    out["first_frame_beyond_5_samples"] = beyond_5
    if len(first_reach) >= 2:
        levels = sorted(first_reach)
        span = first_reach[levels[-1]] - first_reach[levels[0]]
        out["step_period_frames"] = span / (levels[-1] - levels[0])
    else:
        out["step_period_frames"] = None
    return out
