"""Command-line interface for simulation, limits, fluctuations and verification.

Subcommands mirror the verification surfaces: ``simulate``, ``limit``,
``fluctuate``, ``qv``, ``lln``, ``clt``, ``converge`` run one study from a
JSON config and write a result directory; ``validate`` runs the full
acceptance suite.  Exit code is 0 iff every verdict passes.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .harness import (ExperimentConfig, emit, run_clt, run_convergence,
                      run_fluctuate, run_limit, run_lln, run_qv_check,
                      run_simulate)


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", type=Path, required=config_required,
                   help="experiment JSON config")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes for replicates")
    p.add_argument("--emit-events", action="store_true",
                   help="write per-replicate event logs")
    p.add_argument("--emit-fields", action="store_true",
                   help="write solver/fluctuation field CSVs")


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.emit_events:
        config.emit_events = True
    if args.emit_fields:
        config.emit_fields = True
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="agestruct",
        description="age-structured branching simulation and limit verification")
    sub = parser.add_subparsers(dest="command", required=True)
    runs = {
        "simulate": "simulate finite-population replicates",
        "limit": "solve the deterministic limit",
        "fluctuate": "simulate fluctuation-field paths",
        "qv": "martingale quadratic-variation checks",
        "lln": "law-of-large-numbers checks",
        "clt": "fluctuation mean/variance/Gaussianity checks",
        "converge": "solver refinement studies",
    }
    for name, help_text in runs.items():
        _add_common(sub.add_parser(name, help=help_text))
    v = sub.add_parser("validate", help="run the full acceptance suite")
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out", type=Path, default=None)

    args = parser.parse_args(argv)

    if args.command == "validate":
        from .acceptance import PREREGISTERED_SEED, AcceptanceSuite

        seed = PREREGISTERED_SEED if args.seed is None else args.seed
        suite = AcceptanceSuite(seed=seed, workers=args.workers)
        results = suite.run_all()
        for res in results:
            print(res.line())
            for d in res.details:
                print(f"    {d}")
        ok = all(r.passed for r in results)
        print("acceptance suite:", "PASS" if ok else "FAIL")
        return 0 if ok else 1

    config = _load_config(args)
    outdir = args.out if args.out is not None else Path(config.outdir or f"out_{args.command}")
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.command == "simulate":
        report = run_simulate(config, outdir=outdir)
    elif args.command == "limit":
        report = run_limit(config, outdir=outdir if config.emit_fields else None)
    elif args.command == "fluctuate":
        report = run_fluctuate(config, outdir=outdir)
    elif args.command == "qv":
        report = run_qv_check(config)
    elif args.command == "lln":
        report = run_lln(config)
    elif args.command == "clt":
        report = run_clt(config)
    elif args.command == "converge":
        report = run_convergence(config)
    else:  # pragma: no cover
        parser.error(f"unknown command {args.command}")
    emit(report, outdir, config=config, wall_clock_s=time.perf_counter() - t0)
    n_fail = sum(not r.passed for r in report.rows)
    print(f"{args.command}: {len(report.rows)} checks, {n_fail} failed -> {outdir}")
    for note in report.notes:
        print("note:", note)
    return 0 if n_fail == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
