"""Command-line entry point: ``tcpllm <verb> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (ExperimentConfig, MetricsBundle, UnknownParameter, calibrate, conservation_violations,
                      run_experiment, store_calibration, summarize, sweep, sweep_csv, write_outputs)
from .llmclient import CassetteIOError, LiveError, ReplayMiss
from .simcore import SEC
from .netsim import SYNTHETIC_TRACES, ConfigError, TraceFormatError

log = logging.getLogger("tcpllm")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    if getattr(args, "cassette", None):
        if cfg.backend == "replay":
            cfg.cassette = args.cassette
        else:
            cfg.record_cassette = args.cassette
    if getattr(args, "duration", None) is not None:
        cfg.duration_s = args.duration
    if getattr(args, "modes", None):
        cfg.modes = args.modes.split(",")
        cfg.n_senders = len(cfg.modes)
    return cfg


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    cal = calibrate(cfg)
    print(json.dumps(cal.to_dict(), indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        store_calibration(cfg, cal).save(out / "config.json")
        (out / "calibration.json").write_text(json.dumps(cal.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    bundle = run_experiment(cfg)
    rep = summarize(bundle, args.t0, args.t1)
    bad = conservation_violations(bundle)
    for msg in bad:
        log.error("conservation: %s", msg)
    if args.out:
        write_outputs(bundle, args.out, rep)
    for f in rep.flows:
        rtt = "n/a" if f.mean_rtt_ms is None else f"{f.mean_rtt_ms:.2f}"
        print(f"flow {f.flow_id} {f.mode:<18} rtt_ms={rtt} thr_mbps={f.mean_throughput_mbps:.3f} "
              f"share={f.share_pct:.1f}% consults={f.consults}")
    if len(rep.flows) > 1 and rep.jain is not None:
        print(f"jain={rep.jain:.4f} share_sum={rep.share_sum_pct:.1f}%")
    return 1 if bad else 0


def _parse_grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items:
        key, _, values = item.partition("=")
        if not values:
            raise ConfigError(f"grid entry must look like key=v1,v2: {item!r}")
        grid[key] = [json.loads(v) if _is_json(v) else v for v in values.split(",")]
    return grid


def _is_json(v: str) -> bool:
    try:
        json.loads(v)
        return True
    except ValueError:
        return False


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = sweep(cfg, _parse_grid(args.grid))
    text = sweep_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    bundle = MetricsBundle.load(args.bundle)
    rep = summarize(bundle, args.t0, args.t1)
    if args.out:
        write_outputs(bundle, args.out, rep)
    sys.stdout.write(rep.dumps())
    return 0


def cmd_gen_trace(args) -> int:
    trace = SYNTHETIC_TRACES[args.kind](args.seed)
    if args.out:
        trace.save(args.out)
    else:
        sys.stdout.write(trace.to_csv())
    log.info("%s mean %.3f Mb/s over 120 s", args.kind, trace.mean_mbps(0, 120 * SEC))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcpllm", description="Congestion-control policy simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, backend=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--duration", type=float, help="override duration in seconds")
        sp.add_argument("--modes", help="comma-separated per-flow modes, e.g. NewReno,HeuristicCC")
        if backend:
            sp.add_argument("--backend", choices=["live", "mock", "replay"])
            sp.add_argument("--cassette", help="cassette to replay from (replay) or record into (mock/live)")

    sp = sub.add_parser("calibrate", help="run the NewReno probe and print trigger thresholds")
    common(sp, backend=False)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("run", help="run one experiment")
    common(sp)
    sp.add_argument("--t0", type=float, help="summary window start (s)")
    sp.add_argument("--t1", type=float, help="summary window end (s)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a parameter grid")
    common(sp)
    sp.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                    help="dotted config key and values; repeatable")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="re-summarize a stored bundle.json")
    sp.add_argument("bundle")
    sp.add_argument("--out")
    sp.add_argument("--t0", type=float)
    sp.add_argument("--t1", type=float)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("gen-trace", help="write a synthetic bandwidth trace as CSV")
    sp.add_argument("kind", choices=sorted(SYNTHETIC_TRACES))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceFormatError, UnknownParameter, ReplayMiss, CassetteIOError, LiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
