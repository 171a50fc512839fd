"""Scenario metrics: throughput, delay percentiles, power and Jain fairness."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .netsim import EventLog, FlowSeries, measure

PERCENTILES = (10, 25, 50, 75, 90, 95, 99)


def jain_index(rates: Sequence[float]) -> float | None:
    """(sum x)^2 / (n * sum x^2); ``None`` when every rate is zero."""
    n = len(rates)
    if n == 0:
        raise ValueError("need at least one rate")
    if any(r < 0 for r in rates):
        raise ValueError("rates must be non-negative")
    sq = math.fsum(r * r for r in rates)
    if sq == 0:
        return None
    total = math.fsum(rates)
    return min(1.0, total * total / (n * sq))


def windowed_jain(per_flow: Sequence[Sequence[float]]) -> list[float | None]:
    """Jain index per window; ``per_flow[i][w]`` is flow i's rate in window w."""
    if not per_flow:
        return []
    nwin = min(len(s) for s in per_flow)
    return [jain_index([s[w] for s in per_flow]) for w in range(nwin)]


def rebin(rates: Sequence[float], k: int) -> list[float]:
    """Average each run of ``k`` equal windows into one; a partial tail is dropped."""
    n = len(rates) // k
    return [math.fsum(rates[i * k:(i + 1) * k]) / k for i in range(n)]


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    if not samples:
        raise ValueError("no samples")
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


def percentiles(samples: Sequence[float], ps: Sequence[float] = PERCENTILES) -> dict[int, float]:
    if not samples:
        return {}
    ordered = sorted(samples)
    n = len(ordered)
    return {p: ordered[max(1, math.ceil(p / 100.0 * n)) - 1] for p in ps}


def power(throughput_bps: float, mean_delay_s: float) -> float | None:
    if mean_delay_s <= 0:
        return None
    return throughput_bps / mean_delay_s


@dataclass
class FlowMetrics:
    flow: int
    cca: str
    throughput_bps: float
    delay_mean_ms: float | None
    delay_pct_ms: dict[int, float]
    power: float | None
    delivered_bytes: int
    dropped: int

    def row(self) -> dict:
        d = {
            "flow": self.flow,
            "cca": self.cca,
            "throughput_mbps": _r(self.throughput_bps / 1e6),
            "delay_mean_ms": _r(self.delay_mean_ms),
        }
        for p in PERCENTILES:
            d[f"delay_p{p}_ms"] = _r(self.delay_pct_ms.get(p))
        d["power"] = _r(self.power)
        d["delivered_bytes"] = self.delivered_bytes
        d["dropped"] = self.dropped
        return d


@dataclass
class MetricsReport:
    flows: list[FlowMetrics]
    aggregate: FlowMetrics
    jain_overall: float | None
    jain_windows: list[float | None] = field(default_factory=list)
    comparison: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "flows": [f.row() for f in self.flows],
            "aggregate": self.aggregate.row(),
            "jain_overall": _r(self.jain_overall),
            "jain_windows": [_r(j) for j in self.jain_windows],
            "comparison": {k: _r(v) for k, v in sorted(self.comparison.items())},
        }


def _r(x, nd: int = 6):
    if x is None:
        return None
    return round(float(x), nd)


def _flow_metrics(idx: int, cca: str, owd_us: Sequence[int], tput: float, delivered: int, dropped: int) -> FlowMetrics:
    if owd_us:
        mean_ms = math.fsum(owd_us) / len(owd_us) / 1000.0
        pct = {p: v / 1000.0 for p, v in percentiles(owd_us).items()}
    else:
        mean_ms, pct = None, {}
    pw = power(tput, mean_ms / 1000.0) if mean_ms else None
    return FlowMetrics(idx, cca, tput, mean_ms, pct, pw, delivered, dropped)


def report(log: EventLog, window_ms: float = 100.0, jain_window_ms: float = 1000.0,
           start_ms: float = 0.0) -> MetricsReport:
    """Per-flow and aggregate metrics from a finished simulation log."""
    series = measure(log, window_ms, start_ms)
    names = dict(s.split(":", 1) for s in log.flows) if log.flows else {}
    flows = []
    all_owd: list[int] = []
    total_tput = 0.0
    for idx in sorted(series):
        s = series[idx]
        tput = statistics.fmean(s.throughput_bps) if s.throughput_bps else 0.0
        total_tput += tput
        all_owd.extend(s.owd_us)
        flows.append(_flow_metrics(idx, names.get(str(idx), "?"), s.owd_us, tput, s.delivered_bytes, s.dropped))
    agg = _flow_metrics(-1, "all", all_owd, total_tput,
                        sum(f.delivered_bytes for f in flows), sum(f.dropped for f in flows))
    jain_all = jain_index([f.throughput_bps for f in flows]) if flows else None
    ratio = jain_window_ms / window_ms
    if ratio >= 1 and ratio == int(ratio):
        k = int(ratio)
        per_flow = [rebin(series[i].throughput_bps, k) for i in sorted(series)]
    else:
        jseries = measure(log, jain_window_ms, start_ms)
        per_flow = [jseries[i].throughput_bps for i in sorted(jseries)]
    jw = windowed_jain(per_flow)
    return MetricsReport(flows, agg, jain_all, jw)


def flow_series(log: EventLog, window_ms: float = 100.0) -> dict[int, FlowSeries]:
    return measure(log, window_ms)


__all__ = [
    "PERCENTILES", "FlowMetrics", "MetricsReport", "asdict", "flow_series", "jain_index",
    "percentile", "percentiles", "power", "rebin", "report", "windowed_jain",
]
