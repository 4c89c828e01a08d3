"""Command-line entry point.

Exit codes: 0 on success, 2 on configuration errors, 3 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .bench import generate_ensemble, load_config, run_experiment, save_dataset, summarize_glob
from .exceptions import ConfigurationError, SizeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shotfrugal", description="Shot-frugal optimizer benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--seed-override", type=int, nargs="+", default=None,
                     help="replace the config's seed list")
    run.add_argument("--budget-override", type=int, default=None, help="replace the config's s_max")

    gen = sub.add_parser("gen-dataset", help="write a synthetic dataset file")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--qubits", type=int, required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--depth", type=int, required=True)
    gen.add_argument("--spread", type=float, default=None)
    gen.add_argument("--out", required=True)

    summ = sub.add_parser("summarize", help="summarize trace CSV files")
    summ.add_argument("pattern", help="glob matching trace files")
    summ.add_argument("--out", required=True)
    summ.add_argument("--threshold", type=float, default=None)
    return parser


def _run(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.seed_override is not None:
        changes["seeds"] = tuple(args.seed_override)
    if args.budget_override is not None:
        changes["s_max"] = args.budget_override
    if changes:
        config = dataclasses.replace(config, **changes)
    summary = run_experiment(config)
    summary.pop("records", None)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_RUNTIME if summary["failures"] else EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "gen-dataset":
            entries = generate_ensemble(args.seed, args.qubits, args.count, args.depth, args.spread)
            save_dataset(entries, args.out)
            return EXIT_OK
        stats = summarize_glob(args.pattern, args.out, args.threshold)
        print(json.dumps(stats, indent=2, sort_keys=True))
        return EXIT_OK
    except (ConfigurationError, SizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
