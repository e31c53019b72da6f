from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from mcl.api._exceptions import MCLError
from mcl.api._responses import ResultRecord
from mcl.api.embedding import dump_plan
from mcl.api.runner import ExperimentConfig, embedding_example, emit_plot_data, persist, run_acceptance, run_sweep
from mcl.config import RUNNER_SETTINGS


def _configure_logging(verbose: int) -> None:
    level = logging.getLevelName(RUNNER_SETTINGS.log_level.upper())
    if not isinstance(level, int):
        level = logging.WARNING
    level = max(logging.DEBUG, level - 10 * verbose)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("mcl")
    root.handlers[:] = [handler]
    root.setLevel(level)


def _print_records(records: Sequence[ResultRecord]) -> None:
    for record in records:
        for name, obs in sorted(record.observables.items()):
            interval = f" [{obs.ci_lo:.4g}, {obs.ci_hi:.4g}]" if obs.ci_lo is not None else ""
            print(f"n={record.n} t={record.t} p={record.p:g} {name}={obs.value:.6g}{interval}")
        for error in record.errors:
            print(f"n={record.n} t={record.t} p={record.p:g} error: {error}")


def _finish(records: List[ResultRecord], args: argparse.Namespace) -> int:
    if args.out:
        persist(records, args.out, args.format)
        print(f"Wrote {len(records)} records to {args.out}")
    else:
        _print_records(records)
    if getattr(args, "plot_dir", None):
        paths = emit_plot_data(records, args.plot_dir)
        print(f"Wrote {len(paths)} plot-data files to {args.plot_dir}")
    return 0


def _add_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="result file; prints a summary when omitted")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--plot-dir", help="directory for per-observable plot data")
    parser.add_argument("--workers", type=int, default=None)


def _add_circuit_grid(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, nargs="+", required=True)
    parser.add_argument("--t", type=int, nargs="+", required=True)
    parser.add_argument("--p", type=float, nargs="+", required=True)
    parser.add_argument("--trials", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcl", description="Monitored random circuit experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    perc = sub.add_parser("percolation", help="crossing probability and edge-disjoint crossings of L x TL boxes")
    perc.add_argument("--L", type=int, nargs="+", required=True)
    perc.add_argument("--T", type=float, nargs="+", default=[1.0])
    perc.add_argument("--q", type=float, nargs="+", required=True)
    perc.add_argument("--trials", type=int, default=100)
    perc.add_argument("--seed", type=int, default=0)
    _add_output(perc)

    dim = sub.add_parser("dimension", help="numerical accessible dimension of sampled configurations")
    _add_circuit_grid(dim)
    dim.add_argument("--samples", type=int, default=None, help="Haar gate tuples per configuration")
    dim.add_argument("--tol", type=float, default=None)
    _add_output(dim)

    emb = sub.add_parser("embed", help="embed random logical circuits into sampled configurations")
    _add_circuit_grid(emb)
    emb.add_argument("--k", type=int, default=2)
    emb.add_argument("--depth", type=int, default=2)
    emb.add_argument("--dump-plan", help="write the first grid point's plan and gates as JSON")
    _add_output(emb)

    sweep = sub.add_parser("sweep", help="run an experiment config file")
    sweep.add_argument("--config", required=True)
    _add_output(sweep)

    verify = sub.add_parser("verify", help="run the quick acceptance checks")
    verify.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {"kind": args.command, "trials": args.trials, "seed": args.seed, "format": args.format}
    if args.workers:
        raw["workers"] = args.workers
    if args.command == "percolation":
        raw.update(L=args.L, T=args.T, q=args.q)
    else:
        raw.update(n=args.n, t=args.t, p=args.p)
    if args.command == "dimension":
        if args.samples is not None:
            raw["samples"] = args.samples
        if args.tol is not None:
            raw["tolerance"] = args.tol
    if args.command == "embed":
        raw.update(k=args.k, depth=args.depth)
    return ExperimentConfig.from_dict(raw)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        if args.command == "verify":
            checks = run_acceptance(args.seed)
            for check in checks:
                print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}")
            return 0 if all(c.passed for c in checks) else 1

        if args.command == "sweep":
            config = ExperimentConfig.load(args.config)
            if args.out is None and config.output:
                args.out = config.output
                args.format = config.format
        else:
            config = _config_from_args(args)

        if args.command == "embed" and args.dump_plan:
            plan, _, gates, (fid, weight) = embedding_example(config)
            dump_plan(plan, Path(args.dump_plan), gates)
            print(f"Plan written to {args.dump_plan}: fidelity={fid:.12f} weight={weight:.3e}")

        records = run_sweep(config, workers=args.workers)
        return _finish(records, args)
    except MCLError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
