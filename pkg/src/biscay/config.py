"""YAML scenario and study configuration.

A scenario document looks like::

    trace:                     # exactly one of file / profile / constant_mbps / steps
      profile: random-walk
      min_mbps: 5
      max_mbps: 50
      step_mbps: 5
      duration_s: 60
      interval_ms: 100
      seed: 1
    radio:
      num_carriers: 1
      mimo_layers: 1           # int or one entry per carrier
      tti_us: 1000
      direction: uplink
      fixed_tbs_index: 10
      table: null              # optional prb,tbs_index,bits CSV
      tbs_profile: fixed       # or random
      tbs_period_ms: 100
      tbs_range: [2, 26]
      grant_noise: 0.0
      seed: 0
    wired:
      schedule: [[0, 1000]]    # (time_ms, Mbit/s) steps
      prop_delay_ms: 5
      buffer_bytes: 3000000
    flows:
      - {cca: biscay, start_ms: 0, duration_ms: null, protocol: tcp}
      - {protocol: udp, rate_mbps: 10}
    cell_buffer_bytes: 3000000
    kpi_interval_ms: 10
    kpi_method: 3gpp           # or granted-bytes
    buffer_policy: {mode: drain, period_ms: 1}
    duration_ms: null
    mss: 1500
    seed: 0
    hysteresis: 0.1
    streak: 3
    startup_samples: 3
    downlink_sender_cca: cubic

A study document holds a ``scenario`` mapping (the base) plus study keys;
see :mod:`biscay.harness` for the keys each study reads.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import yaml

from .bandwidth import Method, load_tput_table
from .diag_codec import Direction
from .modem_emulator import BufferMode, BufferPolicy, RadioConfig, TbsProfile
from .netsim import FlowSpec, Scenario, ScenarioError
from .traces import LinkTrace, TraceError, ingest_trace, random_walk, step_trace


class ConfigError(ValueError):
    pass


SCENARIO_KEYS = {
    "trace", "radio", "wired", "flows", "cell_buffer_bytes", "kpi_interval_ms", "kpi_method",
    "buffer_policy", "duration_ms", "mss", "seed", "hysteresis", "streak", "startup_samples",
    "downlink_sender_cca", "log_deliveries",
}
TRACE_KEYS = {"file", "profile", "constant_mbps", "steps", "min_mbps", "max_mbps", "step_mbps",
              "duration_s", "duration_ms", "interval_ms", "seed", "start_mbps"}
RADIO_KEYS = {"num_carriers", "mimo_layers", "tti_us", "direction", "fixed_tbs_index", "table",
              "tbs_profile", "tbs_period_ms", "tbs_range", "grant_noise", "seed"}
WIRED_KEYS = {"schedule", "prop_delay_ms", "buffer_bytes"}
FLOW_KEYS = {"cca", "start_ms", "duration_ms", "protocol", "rate_mbps", "rate_bps"}

_METHODS = {"3gpp": Method.GPP3, "gpp3": Method.GPP3, "granted-bytes": Method.GRANTED_BYTES,
            "granted_bytes": Method.GRANTED_BYTES}


def load_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    doc.setdefault("_base_dir", str(Path(path).resolve().parent))
    return doc


def _check_keys(d: Mapping, allowed: set, where: str) -> None:
    if not isinstance(d, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    extra = sorted(k for k in d if k not in allowed and not str(k).startswith("_"))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, extra))}")


def trace_from_dict(d: Mapping, base_dir: str | Path | None = None) -> LinkTrace:
    _check_keys(d, TRACE_KEYS, "trace")
    kinds = [k for k in ("file", "profile", "constant_mbps", "steps") if k in d]
    if len(kinds) != 1:
        raise ConfigError("trace: give exactly one of file, profile, constant_mbps, steps")
    kind = kinds[0]
    try:
        if kind == "file":
            p = Path(d["file"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            return ingest_trace(p, d.get("duration_ms"))
        dur_s = _duration_s(d)
        if kind == "constant_mbps":
            return LinkTrace.constant(float(d["constant_mbps"]) * 1e6, int(round(dur_s * 1000)))
        if kind == "steps":
            return step_trace([(float(t), float(m)) for t, m in d["steps"]], dur_s)
        if d["profile"] != "random-walk":
            raise ConfigError(f"trace: unknown profile {d['profile']!r}")
        return random_walk(
            float(d.get("min_mbps", 5)), float(d.get("max_mbps", 50)), float(d.get("step_mbps", 5)),
            dur_s, int(d.get("interval_ms", 100)), int(d.get("seed", 0)),
            None if d.get("start_mbps") is None else float(d["start_mbps"]),
        )
    except (TraceError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"trace: {exc}") from exc


def _duration_s(d: Mapping) -> float:
    if "duration_s" in d:
        return float(d["duration_s"])
    if "duration_ms" in d:
        return float(d["duration_ms"]) / 1000.0
    raise ConfigError("trace: duration_s is required")


def radio_from_dict(d: Mapping | None, base_dir: str | Path | None = None) -> RadioConfig:
    d = dict(d or {})
    _check_keys(d, RADIO_KEYS, "radio")
    kw: dict[str, Any] = {}
    for key in ("num_carriers", "fixed_tbs_index", "tbs_period_ms", "seed"):
        if key in d:
            kw[key] = int(d[key])
    for key in ("mimo_layers", "tti_us"):
        if key in d:
            v = d[key]
            kw[key] = int(v) if isinstance(v, (int, float)) else [int(x) for x in v]
    if "grant_noise" in d:
        kw["grant_noise"] = float(d["grant_noise"])
    if "tbs_range" in d:
        lo, hi = d["tbs_range"]
        kw["tbs_range"] = (int(lo), int(hi))
    try:
        if "direction" in d:
            kw["direction"] = Direction[str(d["direction"]).upper()]
        if "tbs_profile" in d:
            kw["tbs_profile"] = TbsProfile(str(d["tbs_profile"]).lower())
        if d.get("table"):
            p = Path(d["table"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            kw["tput_table"] = load_tput_table(p)
        return RadioConfig(**kw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"radio: {exc}") from exc


def flow_from_dict(d: Mapping) -> FlowSpec:
    _check_keys(d, FLOW_KEYS, "flow")
    rate = d.get("rate_bps")
    if rate is None and d.get("rate_mbps") is not None:
        rate = float(d["rate_mbps"]) * 1e6
    try:
        return FlowSpec(
            cca=str(d.get("cca", "biscay")),
            start_ms=float(d.get("start_ms", 0)),
            duration_ms=None if d.get("duration_ms") is None else float(d["duration_ms"]),
            protocol=str(d.get("protocol", "tcp")).lower(),
            rate_bps=float(rate or 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"flow: {exc}") from exc


def buffer_policy_from_dict(d: Mapping | None) -> BufferPolicy:
    d = dict(d or {})
    _check_keys(d, {"mode", "period_ms"}, "buffer_policy")
    try:
        mode = BufferMode(str(d.get("mode", "drain")).lower())
    except ValueError as exc:
        raise ConfigError(f"buffer_policy: {exc}") from exc
    default = 1.0 if mode is BufferMode.DRAIN else 1000.0
    period = float(d.get("period_ms", default))
    if period <= 0:
        raise ConfigError("buffer_policy: period_ms must be positive")
    return BufferPolicy(mode, int(round(period * 1000)))


def scenario_from_dict(d: Mapping, base_dir: str | Path | None = None, seed: int | None = None) -> Scenario:
    """Build and validate a :class:`Scenario`; ``seed`` overrides the document's."""
    _check_keys(d, SCENARIO_KEYS, "scenario")
    base_dir = base_dir if base_dir is not None else d.get("_base_dir")
    if "trace" not in d:
        raise ConfigError("scenario: trace is required")
    trace = trace_from_dict(d["trace"], base_dir)
    radio = radio_from_dict(d.get("radio"), base_dir)
    wired = dict(d.get("wired") or {})
    _check_keys(wired, WIRED_KEYS, "wired")
    schedule = tuple((float(t), float(m) * 1e6) for t, m in wired.get("schedule", [[0, 1000]]))
    flows_raw = d.get("flows", [{}])
    if not isinstance(flows_raw, list):
        raise ConfigError("flows: expected a list")
    method = _METHODS.get(str(d.get("kpi_method", "3gpp")).lower())
    if method is None:
        raise ConfigError(f"kpi_method: unknown method {d.get('kpi_method')!r}")
    kw = dict(
        trace=trace,
        radio=radio,
        wired_schedule=schedule,
        prop_delay_ms=float(wired.get("prop_delay_ms", 5.0)),
        flows=tuple(flow_from_dict(f) for f in flows_raw),
        kpi_method=method,
        buffer_policy=buffer_policy_from_dict(d.get("buffer_policy")),
        seed=int(d.get("seed", 0) if seed is None else seed),
    )
    if "buffer_bytes" in wired:
        kw["wired_buffer_bytes"] = int(wired["buffer_bytes"])
    for key in ("cell_buffer_bytes", "mss", "streak", "startup_samples"):
        if key in d:
            kw[key] = int(d[key])
    for key in ("kpi_interval_ms", "hysteresis"):
        if key in d:
            kw[key] = float(d[key])
    if d.get("duration_ms") is not None:
        kw["duration_ms"] = float(d["duration_ms"])
    if "downlink_sender_cca" in d:
        kw["downlink_sender_cca"] = str(d["downlink_sender_cca"])
    if "log_deliveries" in d:
        kw["log_deliveries"] = bool(d["log_deliveries"])
    sc = Scenario(**kw)
    try:
        sc.validate()
    except ScenarioError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    return sc
