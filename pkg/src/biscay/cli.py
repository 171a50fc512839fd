"""``sim`` command line: run scenarios and studies, make traces, handle diag logs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, scenario_from_dict
from .diag_codec import CodecError, MsgType, StreamDecoder, encode_frame
from .harness import STUDIES, StudyError, run_scenario, run_study
from .modem_emulator import BufferPolicy, RadioConfig, run_emulator
from .netsim import ScenarioError
from .traces import LinkTrace, TraceError, dumps_trace, ingest_trace, random_walk


def _cmd_run(args) -> int:
    doc = load_config(args.scenario)
    body = doc.get("scenario", doc)
    if body is not doc and "_base_dir" in doc:
        body = dict(body, _base_dir=doc["_base_dir"])
    sc = scenario_from_dict(body, seed=args.seed)
    result = run_scenario(sc, args.out, events=args.events)
    json.dump(result.report["runs"][0]["metrics"], sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _cmd_study(args) -> int:
    config = load_config(args.config)
    result = run_study(args.name, config, args.out, seed=args.seed, jobs=args.jobs,
                       events=True if args.events else None)
    print(f"{args.name}: {len(result.runs)} run(s), {len(result.rows)} row(s) -> {args.out}")
    summary = result.report.get("summary")
    if summary is not None:
        json.dump(summary, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _cmd_gen_trace(args) -> int:
    if args.profile != "random-walk":
        raise TraceError(f"unknown profile {args.profile!r}")
    trace = random_walk(args.min_mbps, args.max_mbps, args.step, args.duration,
                        interval_ms=args.interval_ms, seed=args.seed)
    text = dumps_trace(trace)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_diag_dump(args) -> int:
    data = Path(args.file).read_bytes()
    dec = StreamDecoder()
    frames = dec.feed(data, final=True)
    out = sys.stdout
    for f in frames[: args.limit] if args.limit else frames:
        p = f.payload
        fields = " ".join(f"{k}={int(v) if hasattr(v, 'value') else v}" for k, v in vars(p).items())
        out.write(f"{f.timestamp_us} {f.msg_type.name} {fields}\n")
    d = dec.diagnostics
    print(f"# frames={len(frames)} crc_errors={d.crc_errors} unknown_type={d.unknown_type} "
          f"bad_payload={d.bad_payload} skipped_bytes={d.skipped_bytes}", file=sys.stderr)
    return 0


def _cmd_diag_gen(args) -> int:
    if args.trace:
        trace = ingest_trace(args.trace)
    else:
        trace = LinkTrace.constant(args.constant_mbps * 1e6, int(args.duration * 1000))
    cfg = RadioConfig(num_carriers=args.carriers, mimo_layers=args.mimo, seed=args.seed)
    chunks: list[bytes] = []
    run_emulator(trace, cfg, BufferPolicy.drain(1.0), on_frame=lambda f, now: chunks.append(encode_frame(f)),
                 msg_types=tuple(MsgType))
    data = b"".join(chunks)
    Path(args.out).write_bytes(data)
    print(f"wrote {len(chunks)} frames ({len(data)} bytes) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sim", description="Cellular congestion-control simulator")
    ap.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--scenario", required=True, help="scenario YAML")
    p.add_argument("--out", help="directory for summary.csv / report.json")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--events", action="store_true", help="also write events.log")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("study", help="run a named study")
    p.add_argument("name", choices=STUDIES)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel scenario runs")
    p.add_argument("--events", action="store_true", help="write one events log per run")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("gen-trace", help="write a synthetic capacity trace CSV")
    p.add_argument("--profile", default="random-walk")
    p.add_argument("--min-mbps", type=float, required=True)
    p.add_argument("--max-mbps", type=float, required=True)
    p.add_argument("--step", type=float, required=True, help="max change per interval, Mbit/s")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--interval-ms", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("diag", help="diag log tools")
    dsub = p.add_subparsers(dest="diag_cmd", required=True)
    d = dsub.add_parser("dump", help="decode a binary diag log")
    d.add_argument("file")
    d.add_argument("--limit", type=int, default=0)
    d.set_defaults(func=_cmd_diag_dump)
    d = dsub.add_parser("gen", help="emit a diag log from a trace")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="capacity trace CSV")
    src.add_argument("--constant-mbps", type=float)
    d.add_argument("--duration", type=float, default=1.0, help="seconds, with --constant-mbps")
    d.add_argument("--carriers", type=int, default=1)
    d.add_argument("--mimo", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_diag_gen)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StudyError, ScenarioError, TraceError, CodecError, ValueError) as exc:
        print(f"sim: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
