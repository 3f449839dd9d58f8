"""Command line entry point: ``nr-rtt simulate|estimate|trace|cdf``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .channel import ClockDriftModel, Measurement
from .estimators import matched_filter_rtt, peak_detector_range
from .numerology import SystemConfig, TaCode, ta_to_rtt
from .signaling import (
    Scenario,
    SessionConfig,
    legacy_ue_trace,
    read_trace_jsonl,
    run_rtt_session,
    write_trace_jsonl,
)
from .srs import estimate_from_csv, read_estimates_bin

log = logging.getLogger("nr_rtt")


def cmd_simulate(args) -> int:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    if args.full:
        cfg = harness.with_full_trials(cfg)
    if args.seed is not None:
        cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), "base_seed": args.seed})
    results = harness.run_experiment(cfg, workers=args.workers)
    paths = harness.write_results(results, args.out, cfg)
    for (method, snr, M), table in results.items():
        print(f"{method} snr={snr:g}dB M={M}: n={len(table)} p90={table.percentile(0.9):.3f} m")
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def _load_measurements(paths: list[str], system: SystemConfig, ta: int) -> list[Measurement]:
    tau_r = ta_to_rtt(TaCode(ta, system.ta_cap), system.timing)
    out: list[Measurement] = []
    for p in paths:
        suffix = Path(p).suffix.lower()
        if suffix == ".jsonl":
            out.extend(read_trace_jsonl(p).measurements)
            continue
        if suffix == ".csv":
            ests = [estimate_from_csv(Path(p).read_text(), system.fft_size)]
        else:
            ests = read_estimates_bin(p)
        for e in ests:
            out.append(Measurement(e, tau_r, TaCode(ta, system.ta_cap), e.slot_time))
    return out


def cmd_estimate(args) -> int:
    system = SystemConfig()
    meas = _load_measurements(args.input, system, args.ta)
    if not meas:
        print("no measurements found", file=sys.stderr)
        return 1
    m = args.m or len(meas)
    for start in range(0, len(meas) - m + 1, m):
        batch = meas[start:start + m]
        if args.method == "mf":
            est = matched_filter_rtt(batch, system=system, compensate=not args.no_compensate)
        else:
            est = peak_detector_range(batch, compensate_coarse=not args.no_compensate, system=system)
        flag = " (boundary)" if est.at_boundary else ""
        print(f"{est.method} M={est.m_used} rtt={est.rtt:.6e} s range={est.range_m:.4f} m{flag}")
    return 0


def cmd_trace(args) -> int:
    drift = ClockDriftModel(drift_ppm=args.drift_ppm)
    scenario = Scenario(distance_m=args.distance, snr_db=args.snr, drift=drift)
    rng = np.random.default_rng(args.seed)
    if args.mode == "legacy":
        trace = legacy_ue_trace(SessionConfig(mode="phytest", num_rounds=args.rounds), scenario, rng)
    else:
        trace = run_rtt_session(SessionConfig(mode=args.mode, num_rounds=args.rounds), scenario, rng)
    write_trace_jsonl(trace, args.out)
    print(f"wrote {len(trace.events)} events and {len(trace.measurements)} measurements to {args.out}")
    return 0


def cmd_cdf(args) -> int:
    table = harness.empirical_cdf(harness.read_error_csv(args.input))
    for p in args.percentile:
        print(f"p{p:g}: {table.percentile(p):.6g}")
    return 0


def _float(s: str) -> float:
    return math.inf if s.lower() in ("inf", "+inf") else float(s)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nr-rtt", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the Monte Carlo experiment")
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--full", action="store_true", help=f"{harness.FULL_TRIALS} measurements per distance")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate range from captured channel estimates")
    p.add_argument("--input", action="append", required=True,
                   help=".bin records, a k,re,im .csv, or a trace .jsonl (repeatable)")
    p.add_argument("--method", choices=("mf", "pd"), default="mf")
    p.add_argument("--m", type=int, help="batch size (default: all)")
    p.add_argument("--ta", type=int, default=0, help="TA code for .bin/.csv inputs")
    p.add_argument("--no-compensate", action="store_true")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("trace", help="emit a session trace as JSON lines")
    p.add_argument("--mode", choices=("proposed", "phytest", "legacy"), default="proposed")
    p.add_argument("--out", required=True)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--distance", type=float, default=10.0)
    p.add_argument("--snr", type=_float, default=math.inf)
    p.add_argument("--drift-ppm", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("cdf", help="percentiles of an error CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--percentile", type=float, action="append", default=None)
    p.set_defaults(func=cmd_cdf)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "percentile", "") is None:
        args.percentile = [0.9]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
