"""Experiment studies: build scenarios from a config, run them, write reports.

Every study writes ``summary.csv`` (one row per run per flow, or one row
per run for the radio-only studies) and ``report.json``. Both are pure
functions of the config and seed. Study keys, beside the base
``scenario`` mapping:

compare
    ``ccas`` (default biscay, bbr-lite, cubic), ``subject`` (biscay),
    ``traces`` (10) or ``trace_seeds``, ``targets``:
    ``{delay_ratio_max: {cca: x}, tput_ratio_min: y}``.
sweep
    ``intervals_ms`` (1, 10, 100, 1000, 1500), ``cca`` (biscay),
    ``reference_ms`` (10), ``onset_factor`` (1.5).
multiflow
    ``ccas``, ``n_flows`` (3), ``jain_window_ms`` (1000),
    ``jain_threshold`` (0.95), ``warmup_ms`` (0).
fallback
    ``wired_mbps`` steps (5, 10, 15), ``base_mbps`` (50),
    ``segment_ms`` (10000), ``cca`` (biscay).
correlate
    ``udp_rate_mbps`` (80), ``window_ms`` (100).
granularity
    ``duration_ms`` (10000), ``drain_period_ms`` (1), ``batch_period_ms`` (1000).
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .bandwidth import pearson
from .cca import CCA_NAMES, CcState
from .config import ConfigError, scenario_from_dict
from .diag_codec import DiagChannel, DiagFrame, MsgType
from .metrics import jain_index, percentiles, report, windowed_jain
from .modem_emulator import BufferPolicy, ModemEmulator, RadioConfig, grants_from_capacity, inter_arrivals
from .netsim import FlowSpec, Scenario, Simulator, measure
from .traces import LinkTrace

STUDIES = ("compare", "sweep", "multiflow", "fallback", "correlate", "granularity")


class StudyError(ValueError):
    pass


@dataclass
class RunSpec:
    run: int
    labels: dict
    scenario: Scenario


@dataclass
class RunOutcome:
    run: int
    labels: dict
    metrics: dict
    rows: list[dict]
    extra: dict = field(default_factory=dict)
    events: str | None = None


@dataclass
class StudyResult:
    name: str
    rows: list[dict]
    report: dict
    runs: list[RunOutcome]

    def csv_text(self) -> str:
        return rows_to_csv(self.rows)

    def json_text(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows: Sequence[dict]) -> str:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return v


def _r(x, nd=6):
    return None if x is None else round(float(x), nd)


# -- config helpers ------------------------------------------------------------


def _base(config: Mapping) -> dict:
    sc = config.get("scenario")
    if not isinstance(sc, Mapping):
        raise StudyError("config needs a 'scenario' mapping")
    out = copy.deepcopy(dict(sc))
    if "_base_dir" in config:
        out.setdefault("_base_dir", config["_base_dir"])
    return out


def _build(d: Mapping, seed: int | None) -> Scenario:
    try:
        return scenario_from_dict(d, seed=seed)
    except ConfigError as exc:
        raise StudyError(str(exc)) from exc


def _ccas(config: Mapping, default=("biscay", "bbr-lite", "cubic")) -> list[str]:
    ccas = list(config.get("ccas", default))
    bad = [c for c in ccas if c not in CCA_NAMES]
    if bad or not ccas:
        raise StudyError(f"unknown CCA(s): {', '.join(bad) or '(none)'}")
    return ccas


def _flow_rows(log, labels: dict, run: int, window_ms: float = 100.0) -> tuple[list[dict], dict]:
    rep = report(log, window_ms)
    rows = []
    for fm in rep.flows:
        rows.append({"run": run, **labels, **fm.row()})
    metrics = rep.to_dict()
    metrics.pop("jain_windows", None)
    return rows, metrics


# -- generic netsim run -----------------------------------------------------------


def _run_netsim(spec: RunSpec, extra_fn: Callable | None = None, keep_events: bool = False) -> RunOutcome:
    sim = Simulator(spec.scenario)
    log = sim.run()
    rows, metrics = _flow_rows(log, spec.labels, spec.run)
    trans = sim.transitions()
    metrics["transitions"] = {str(i): len(t) for i, t in trans.items()}
    extra = extra_fn(sim, log) if extra_fn else {}
    return RunOutcome(spec.run, spec.labels, metrics, rows, extra, log.dumps() if keep_events else None)


def _execute(specs: list[RunSpec], fn: Callable, jobs: int) -> list[RunOutcome]:
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, specs))
    return [fn(s) for s in specs]


# -- studies -------------------------------------------------------------------------


def _plan_compare(config, seed):
    base = _base(config)
    ccas = _ccas(config)
    subject = config.get("subject", "biscay")
    if subject not in ccas:
        raise StudyError("subject CCA must be one of ccas")
    tr = base.get("trace", {})
    if "trace_seeds" in config:
        seeds = [int(s) for s in config["trace_seeds"]]
    else:
        n = int(config.get("traces", 10))
        if n < 1:
            raise StudyError("traces must be >= 1")
        seeds = [seed + i for i in range(n)] if "profile" in tr else [seed]
    specs = []
    for ts in seeds:
        d = copy.deepcopy(base)
        if "profile" in d.get("trace", {}):
            d["trace"]["seed"] = ts
        for cca in ccas:
            d2 = copy.deepcopy(d)
            flows = d2.get("flows") or [{}]
            d2["flows"] = [dict(flows[0], cca=cca)]
            specs.append(RunSpec(len(specs), {"trace_seed": ts, "cca": cca}, _build(d2, seed + ts)))
    return specs


def _summarise_compare(config, outcomes: list[RunOutcome]) -> dict:
    ccas = _ccas(config)
    subject = config.get("subject", "biscay")
    targets = config.get("targets", {})
    dmax = targets.get("delay_ratio_max", {"bbr-lite": 0.5, "cubic": 0.2})
    tmin = float(targets.get("tput_ratio_min", 0.9))
    by_trace: dict[int, dict[str, dict]] = {}
    for o in outcomes:
        by_trace.setdefault(o.labels["trace_seed"], {})[o.labels["cca"]] = o.metrics["aggregate"]
    per_trace = []
    met = 0
    for ts in sorted(by_trace):
        m = by_trace[ts]
        s = m[subject]
        entry: dict[str, Any] = {"trace_seed": ts}
        ok = True
        for b in ccas:
            if b == subject:
                continue
            dr = _ratio(s["delay_mean_ms"], m[b]["delay_mean_ms"])
            tr = _ratio(s["throughput_mbps"], m[b]["throughput_mbps"])
            entry[f"delay_ratio_vs_{b}"] = _r(dr)
            entry[f"tput_ratio_vs_{b}"] = _r(tr)
            if b in dmax and (dr is None or dr > float(dmax[b])):
                ok = False
            if tr is None or tr < tmin:
                ok = False
        entry["meets_targets"] = ok
        met += ok
        per_trace.append(entry)
    return {"subject": subject, "per_trace": per_trace, "traces_meeting_targets": met,
            "traces": len(per_trace), "targets": {"delay_ratio_max": dmax, "tput_ratio_min": tmin}}


def _ratio(a, b):
    if a is None or b is None or b == 0:
        return None
    return a / b


def _plan_sweep(config, seed):
    base = _base(config)
    cca = config.get("cca", "biscay")
    intervals = [float(x) for x in config.get("intervals_ms", (1, 10, 100, 1000, 1500))]
    if not intervals or any(x <= 0 for x in intervals):
        raise StudyError("intervals_ms must be positive")
    specs = []
    for iv in intervals:
        d = copy.deepcopy(base)
        d["kpi_interval_ms"] = iv
        flows = d.get("flows") or [{}]
        d["flows"] = [dict(f, cca=cca) if f.get("protocol", "tcp") == "tcp" else f for f in flows]
        specs.append(RunSpec(len(specs), {"kpi_interval_ms": iv}, _build(d, seed)))
    return specs


def _summarise_sweep(config, outcomes):
    ref_ms = float(config.get("reference_ms", 10))
    factor = float(config.get("onset_factor", 1.5))
    pts = []
    for o in outcomes:
        a = o.metrics["aggregate"]
        pts.append({"kpi_interval_ms": o.labels["kpi_interval_ms"], "throughput_mbps": a["throughput_mbps"],
                    "delay_mean_ms": a["delay_mean_ms"], "delay_p95_ms": a["delay_p95_ms"]})
    pts.sort(key=lambda p: p["kpi_interval_ms"])
    ref = next((p for p in pts if p["kpi_interval_ms"] == ref_ms), None)
    onset = None
    if ref is not None and ref["delay_mean_ms"]:
        for p in pts:
            if p["delay_mean_ms"] is not None and p["delay_mean_ms"] >= factor * ref["delay_mean_ms"]:
                onset = p["kpi_interval_ms"]
                break
    return {"points": pts, "reference_ms": ref_ms, "onset_factor": factor, "degradation_onset_ms": onset}


def _plan_multiflow(config, seed):
    base = _base(config)
    n = int(config.get("n_flows", 3))
    if n < 1:
        raise StudyError("n_flows must be >= 1")
    specs = []
    for cca in _ccas(config):
        d = copy.deepcopy(base)
        proto = (d.get("flows") or [{}])[0]
        d["flows"] = [dict(proto, cca=cca) for _ in range(n)]
        specs.append(RunSpec(len(specs), {"cca": cca}, _build(d, seed)))
    return specs


def _multiflow_extra(config):
    win = float(config.get("jain_window_ms", 1000))
    thr = float(config.get("jain_threshold", 0.95))
    warm = float(config.get("warmup_ms", 0))

    def fn(sim, log):
        series = measure(log, win, warm)
        idx = sorted(series)
        wj = [j for j in windowed_jain([series[i].throughput_bps for i in idx]) if j is not None]
        means = [statistics.fmean(series[i].throughput_bps) if series[i].throughput_bps else 0.0 for i in idx]
        owd = [d for i in idx for d in series[i].owd_us]
        pct = percentiles(owd)
        return {
            "jain_windows": [_r(j) for j in wj],
            "jain_fraction_above": _r(sum(j >= thr for j in wj) / len(wj)) if wj else None,
            "jain_median": _r(statistics.median(wj)) if wj else None,
            "jain_whole_run": _r(jain_index(means)) if any(means) else None,
            "delay_p95_ms": _r(pct[95] / 1000.0) if pct else None,
            "delay_mean_ms": _r(statistics.fmean(owd) / 1000.0) if owd else None,
        }
    return fn


def _plan_fallback(config, seed):
    base = _base(config)
    seg = float(config.get("segment_ms", 10000))
    high = float(config.get("base_mbps", 50))
    lows = [float(x) for x in config.get("wired_mbps", (5, 10, 15))]
    if seg <= 0 or not lows:
        raise StudyError("fallback needs segment_ms > 0 and wired_mbps steps")
    sched = [[0.0, high]]
    for i, lo in enumerate(lows):
        sched.append([(2 * i + 1) * seg, lo])
        sched.append([(2 * i + 2) * seg, high])
    d = copy.deepcopy(base)
    d.setdefault("wired", {})
    d["wired"] = dict(d["wired"], schedule=sched)
    d["duration_ms"] = (2 * len(lows) + 1) * seg
    cca = config.get("cca", "biscay")
    d["flows"] = [dict((d.get("flows") or [{}])[0], cca=cca)]
    return [RunSpec(0, {"cca": cca}, _build(d, seed))]


def _fallback_extra(config):
    seg_ms = float(config.get("segment_ms", 10000))

    def fn(sim, log):
        sc = sim.sc
        trans = sim.transitions()[0]
        sched = [(t, r) for t, r in sc.wired_schedule]
        m = measure(log, 100.0)[0]
        min_rtt_ms = min(m.rtt_us) / 1000.0 if m.rtt_us else None
        segments = []
        for i, (t, r) in enumerate(sched):
            end = sched[i + 1][0] if i + 1 < len(sched) else sc.run_duration_ms
            lo, hi = int((t + (end - t) / 2) / 100), int(end / 100)
            vals = m.throughput_bps[lo:hi]
            cell = sc.trace.mean_capacity(t, end)
            expect = min(r, cell)
            got = statistics.fmean(vals) if vals else 0.0
            segments.append({"start_ms": t, "wired_mbps": _r(r / 1e6), "cellular_mbps": _r(cell / 1e6),
                             "delivered_mbps": _r(got / 1e6), "expected_mbps": _r(expect / 1e6),
                             "rel_error": _r(abs(got - expect) / expect) if expect else None})
        events = []
        for i in range(1, len(sched)):
            t_step = sched[i][0] * 1000
            down = sched[i][1] < sched[i - 1][1]
            want = CcState.FALLBACK if down else CcState.BISCAY
            nxt = sched[i + 1][0] * 1000 if i + 1 < len(sched) else math.inf
            hit = next((ts for ts, _, b in trans if b is want and t_step <= ts < nxt), None)
            events.append({"step_ms": sched[i][0], "direction": "down" if down else "up",
                           "target": want.value, "reached_ms": None if hit is None else hit / 1000.0,
                           "latency_ms": None if hit is None else (hit - t_step) / 1000.0})
        return {
            "min_rtt_ms": _r(min_rtt_ms),
            "fallback_entries_ms": [t / 1000.0 for t, _, b in trans if b is CcState.FALLBACK],
            "transitions": [[t / 1000.0, a.value, b.value] for t, a, b in trans],
            "steps": events,
            "segments": segments,
            "segment_ms": seg_ms,
        }
    return fn


# -- radio-only studies ----------------------------------------------------------------


def _drive_emulator(schedule, radio: RadioConfig, trace: LinkTrace, policy: BufferPolicy,
                    msg_types, on_frame) -> None:
    channel = DiagChannel()
    channel.subscribe(msg_types, on_frame)
    emu = ModemEmulator(schedule, radio, policy, channel, trace)
    end = schedule.duration_us + policy.period_us
    emu.advance(end)
    emu.flush(end)


def _plan_correlate(config, seed):
    base = _base(config)
    d = copy.deepcopy(base)
    rate = float(config.get("udp_rate_mbps", 80))
    d["flows"] = [{"protocol": "udp", "rate_mbps": rate}]
    radio = dict(d.get("radio") or {})
    radio.setdefault("tbs_profile", "random")
    radio.setdefault("grant_noise", 0.1)
    # keep the top of a 50 Mbit/s trace representable at every drawn index
    radio.setdefault("tbs_range", [8, 26])
    d["radio"] = radio
    return [RunSpec(0, {"udp_rate_mbps": rate}, _build(d, seed))]


def correlation_series(sim: Simulator, log, window_ms: float = 100.0) -> dict[str, list[float]]:
    """Per-window ground truth, both KPI estimates and the raw PRB count."""
    win_us = int(window_ms * 1000)
    nwin = int(sim.duration_us // win_us)
    table = sim.radio.tput_table
    gpp = [0.0] * nwin
    prb = [0.0] * nwin
    gb = [0.0] * nwin

    def on_frame(frame: DiagFrame, now_us: int) -> None:
        t = frame.timestamp_us
        if frame.msg_type is MsgType.DCI_GRANT:
            w = t // win_us
            if w < nwin:
                gpp[w] += table.grant_bits(frame.payload)
                prb[w] += frame.payload.prb
        elif frame.msg_type is MsgType.GRANTED_BYTES:
            # a report stamped t covers [t - window, t)
            w = (t - frame.payload.window_us) // win_us
            if 0 <= w < nwin and frame.payload.window_us == win_us:
                gb[w] = frame.payload.bytes_granted * 8e6 / frame.payload.window_us

    _drive_emulator(sim.schedule, sim.radio, sim.sc.trace, BufferPolicy.drain(1.0),
                    (MsgType.DCI_GRANT, MsgType.GRANTED_BYTES), on_frame)
    truth = measure(log, window_ms)
    tput = truth[0].throughput_bps[:nwin] if truth else [0.0] * nwin
    scale = 1e6 / win_us
    return {
        "truth": tput,
        "bw_3gpp": [b * scale for b in gpp],
        "bw_granted_bytes": gb,
        "raw_prb": prb,
        "trace": [sim.sc.trace.mean_capacity(w * window_ms, (w + 1) * window_ms) for w in range(nwin)],
    }


def _correlate_extra(config):
    window_ms = float(config.get("window_ms", 100))

    def fn(sim, log):
        s = correlation_series(sim, log, window_ms)
        # the first window holds the empty-queue start, skip it
        s = {k: v[1:] for k, v in s.items()}
        names = ["truth", "bw_3gpp", "bw_granted_bytes", "raw_prb", "trace"]
        matrix = {a: {b: _r(pearson(s[a], s[b])) for b in names} for a in names}
        return {"pearson": matrix, "windows": len(s["truth"]), "window_ms": window_ms}
    return fn


def _plan_granularity(config, seed):
    base = _base(config)
    d = copy.deepcopy(base)
    d.setdefault("duration_ms", float(config.get("duration_ms", 10000)))
    sc = _build(d, seed)
    specs = []
    for mode, period in (("drain", float(config.get("drain_period_ms", 1))),
                         ("batch", float(config.get("batch_period_ms", 1000)))):
        if period <= 0:
            raise StudyError("buffer periods must be positive")
        pol = BufferPolicy.drain(period) if mode == "drain" else BufferPolicy.batch(period)
        specs.append(RunSpec(len(specs), {"mode": mode, "period_ms": period}, replace(sc, buffer_policy=pol)))
    return specs


def granularity_stats(arrivals_us: Sequence[int], period_us: int) -> dict:
    """Inter-arrival statistics; a gap above half the release period starts a new burst."""
    gaps = inter_arrivals(arrivals_us)
    split = period_us / 2
    starts = [arrivals_us[0]] if arrivals_us else []
    within: list[int] = []
    for t, g in zip(arrivals_us[1:], gaps):
        if g > split:
            starts.append(t)
        else:
            within.append(g)
    periods = inter_arrivals(starts)
    return {
        "frames": len(arrivals_us),
        "median_interarrival_ms": _r(statistics.median(gaps) / 1000.0) if gaps else None,
        "mean_interarrival_ms": _r(statistics.fmean(gaps) / 1000.0) if gaps else None,
        "bursts": len(starts),
        "median_burst_period_ms": _r(statistics.median(periods) / 1000.0) if periods else None,
        "min_burst_period_ms": _r(min(periods) / 1000.0) if periods else None,
        "max_burst_period_ms": _r(max(periods) / 1000.0) if periods else None,
        "max_within_burst_ms": _r(max(within) / 1000.0) if within else 0.0,
    }


def _run_granularity(spec: RunSpec) -> RunOutcome:
    sc = spec.scenario
    radio = replace(sc.radio, seed=sc.radio.seed + sc.seed * 1_000_003)
    schedule = grants_from_capacity(sc.trace, radio, sc.run_duration_ms)
    arrivals: list[int] = []
    _drive_emulator(schedule, radio, sc.trace, sc.buffer_policy, (MsgType.CELL_MEAS,),
                    lambda f, now: arrivals.append(now))
    stats = granularity_stats(arrivals, sc.buffer_policy.period_us)
    row = {"run": spec.run, **spec.labels, **stats}
    return RunOutcome(spec.run, spec.labels, stats, [row])


# -- entry point -------------------------------------------------------------------------


def plan_study(name: str, config: Mapping, seed: int = 0) -> list[RunSpec]:
    """Validate the config and build every scenario; raises before anything runs."""
    planners = {
        "compare": _plan_compare, "sweep": _plan_sweep, "multiflow": _plan_multiflow,
        "fallback": _plan_fallback, "correlate": _plan_correlate, "granularity": _plan_granularity,
    }
    if name not in planners:
        raise StudyError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    try:
        return planners[name](config, seed)
    except ConfigError as exc:
        raise StudyError(str(exc)) from exc
    except (TypeError, KeyError) as exc:
        raise StudyError(f"invalid {name} config: {exc}") from exc


class _NetsimRunner:
    """Picklable callable so runs can go to worker processes."""

    def __init__(self, name: str, config: Mapping, keep_events: bool):
        self.name = name
        self.config = dict(config)
        self.keep_events = keep_events

    def __call__(self, spec: RunSpec) -> RunOutcome:
        extra = {"multiflow": _multiflow_extra, "fallback": _fallback_extra,
                 "correlate": _correlate_extra}.get(self.name)
        return _run_netsim(spec, extra(self.config) if extra else None, self.keep_events)


def run_study(name: str, config: Mapping, out_dir: str | Path | None = None, seed: int = 0,
              jobs: int = 1, events: bool | None = None) -> StudyResult:
    specs = plan_study(name, config, seed)
    keep_events = bool(config.get("write_events", False) if events is None else events)
    if name == "granularity":
        outcomes = _execute(specs, _run_granularity, jobs)
    else:
        outcomes = _execute(specs, _NetsimRunner(name, config, keep_events), jobs)
    outcomes.sort(key=lambda o: o.run)
    rows = [r for o in outcomes for r in o.rows]
    summary = {
        "compare": _summarise_compare, "sweep": _summarise_sweep,
    }.get(name)
    rep = {
        "study": name,
        "seed": seed,
        "runs": [{"run": o.run, "labels": o.labels, "metrics": o.metrics, **o.extra} for o in outcomes],
    }
    if summary is not None:
        rep["summary"] = summary(config, outcomes)
    result = StudyResult(name, rows, rep, outcomes)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(result.csv_text(), encoding="utf-8", newline="\n")
        (out / "report.json").write_text(result.json_text(), encoding="utf-8", newline="\n")
        for o in outcomes:
            if o.events is not None:
                (out / f"events_{o.run}.log").write_text(o.events, encoding="utf-8", newline="\n")
    return result


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None, events: bool = False) -> StudyResult:
    """Single-scenario run behind ``sim run``."""
    outcome = _run_netsim(RunSpec(0, {}, scenario), keep_events=events)
    rep = {"study": "run", "seed": scenario.seed,
           "runs": [{"run": 0, "labels": {}, "metrics": outcome.metrics}]}
    result = StudyResult("run", outcome.rows, rep, [outcome])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(result.csv_text(), encoding="utf-8", newline="\n")
        (out / "report.json").write_text(result.json_text(), encoding="utf-8", newline="\n")
        if outcome.events is not None:
            (out / "events.log").write_text(outcome.events, encoding="utf-8", newline="\n")
    return result


__all__ = [
    "STUDIES", "RunOutcome", "RunSpec", "StudyError", "StudyResult", "correlation_series",
    "granularity_stats", "plan_study", "rows_to_csv", "run_scenario", "run_study",
]
