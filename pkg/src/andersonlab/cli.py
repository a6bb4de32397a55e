"""Command-line entry points; each subcommand runs one slice of an experiment."""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .harness import PHASES, Experiment, MissingTableError
from .ids import ProvenanceError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="andersonlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PHASES + ("all",):
        p = sub.add_parser(name, help=f"run the {name} phase" if name != "all" else "run every phase in order")
        p.add_argument("--config", required=True, help="experiment configuration file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--threads", type=int, help="override the worker count")
        p.add_argument("--out", help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.threads, args.out)
        phases = None if args.command == "all" else [args.command]
        manifest = Experiment(cfg).run(phases)
    except ConfigError as exc:
        for key, msg in exc.errors:
            print(f"config error: {key}: {msg}", file=sys.stderr)
        return 2
    except (MissingTableError, ProvenanceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in manifest.reports:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
