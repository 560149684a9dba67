"""Command-line entry point: one subcommand per experiment kind."""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys

from .bench import ExperimentConfig, SweepRecord, emit_csv, emit_json, format_timing, run_experiment, _jsonable
from .errors import ConfigError

log = logging.getLogger("gfomkit")

COMMANDS = {
    "lower-bound": "lower_bound",
    "se-check": "se_check",
    "pr-bench": "pr_bench",
    "step-sweep": "step_sweep",
    "spectral": "spectral_theory",
    "oamp-fuzz": "oamp_fuzz",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfomkit", description="Lower bounds and benchmarks for first-order methods.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", default=None, help="output path (CSV for trial data, JSON otherwise)")
        s.add_argument("--seed", type=int, default=None, help="override master_seed")
        s.add_argument("--workers", type=int, default=None, help="override worker count")
        s.add_argument("--quadrature-order", type=int, default=None, help="override quadrature order")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _with_suffix(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config, COMMANDS[args.command])
    over = {}
    if args.seed is not None:
        over["master_seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.quadrature_order is not None:
        over["quadrature_order"] = args.quadrature_order
    return cfg.replace(**over) if over else cfg


def _dump(obj, out):
    if out is None:
        json.dump(_jsonable(obj), sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        emit_json(obj, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"gfomkit: config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.output
    out = Path(out) if out else None
    res = run_experiment(cfg)
    if cfg.kind in ("pr_bench", "step_sweep", "se_check"):
        if out is None:
            out = Path(f"{cfg.kind}.csv")
        emit_csv(res.records, out, SweepRecord if cfg.kind == "step_sweep" else None)
        log.info("wrote %d rows to %s", len(res.records), out)
        if cfg.kind == "pr_bench":
            emit_json(res.sidecar, _with_suffix(out, ".theory.json"))
            emit_json(res.timing, _with_suffix(out, ".timing.json"))
            print(format_timing(res.timing))
        else:
            emit_json(res.summary, _with_suffix(out, ".summary.json"))
            if cfg.kind == "step_sweep":
                for name, b in res.summary["best"].items():
                    print(f"{name}: best step {b['step']:.6g} (mean correlation {b['mean_correlation']:.4f})")
            else:
                print(f"max |empirical - predicted| = {res.summary['max_abs_deviation']:.4g}")
    else:
        _dump(res.sidecar, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
