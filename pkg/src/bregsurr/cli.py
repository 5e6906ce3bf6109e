"""Command-line entry point: ``bregsurr run|check|slope``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .errors import BregsurrError
from .experiments import (EXPERIMENTS, SLOPE_WINDOW_START, fit_loglog_slope, load_config,
                          read_trace_csv, run_experiment)

log = logging.getLogger("bregsurr")


def _window(text):
    lo, sep, hi = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError("window must look like a:b")
    try:
        return float(lo) if lo else SLOPE_WINDOW_START, float(hi) if hi else np.inf
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad window {text!r}") from exc


def _add_run_flags(p):
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true", default=None)
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--target", help="accel-compare family: is-mirror or robust-reg")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bregsurr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment and write CSV traces plus summary.txt")
    run_p.add_argument("experiment", choices=[e for e in EXPERIMENTS if e != "invariants"])
    _add_run_flags(run_p)

    check_p = sub.add_parser("check", help="run the built-in self-checks")
    check_p.add_argument("what", choices=["invariants"])
    check_p.add_argument("--out", dest="out_dir")

    slope_p = sub.add_parser("slope", help="log-log slope of running-average opt_error per run")
    slope_p.add_argument("csv")
    slope_p.add_argument("--window", type=_window, default=(SLOPE_WINDOW_START, np.inf))
    slope_p.add_argument("--column", default="opt_error")
    return parser


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in ("n", "p", "seed", "replications", "iters",
                                               "out_dir", "full_scale", "target", "workers")}
    overrides["experiment"] = args.experiment
    cfg = load_config(args.config, overrides)
    result = run_experiment(cfg)
    for k, v in result.summary.items():
        print(f"{k}={v}")
    return 0 if result.passed else 1


def _cmd_check(args) -> int:
    cfg = load_config(None, {"experiment": "invariants", "out_dir": args.out_dir})
    result = run_experiment(cfg, write=args.out_dir is not None)
    for k, v in result.summary.items():
        print(f"{k}={v}")
    return 0 if result.passed else 1


def _cmd_slope(args) -> int:
    rows, _ = read_trace_csv(args.csv)
    runs = {}
    for r in rows:
        runs.setdefault(r["run_id"], []).append(r)
    status = 0
    for rid in sorted(runs):
        vals = np.array([r[args.column] for r in runs[rid] if r[args.column] is not None], dtype=float)
        if args.column == "opt_error":
            vals = np.cumsum(vals) / np.arange(1, vals.size + 1)
        lo, hi = args.window
        try:
            s = fit_loglog_slope(vals, (lo, min(hi, vals.size)))
            print(f"run_id={rid} slope={s:.6g}")
        except BregsurrError as exc:
            print(f"run_id={rid} error={exc}")
            status = 1
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"run": _cmd_run, "check": _cmd_check, "slope": _cmd_slope}[args.command](args)
    except BregsurrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
