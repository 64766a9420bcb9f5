"""Command line entry point: ``mecbandit run|oracle|validate CONFIG``."""
from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigError, MECBanditError
from .harness import oracle_report, prepare, run_experiment

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SIMULATION = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mecbandit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run an experiment"),
                        ("oracle", "print the oracle assignment, value and gaps"),
                        ("validate", "check a configuration without running it")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="master seed (replica r uses seed + r)")
        p.add_argument("--replications", type=int, help="number of replications")
        p.add_argument("--horizon", type=int, help="slots per replication")
        p.add_argument("--output-dir", help="directory for trace and aggregate files")
        if name == "run":
            p.add_argument("--full-trace", action="store_true", default=None,
                           help="also write one row per slot for every replica")
            p.add_argument("--quiet", action="store_true", help="suppress the progress line")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, replications=args.replications, horizon=args.horizon,
            output_dir=args.output_dir, full_trace=getattr(args, "full_trace", None))
        if args.command == "validate":
            prepare(cfg)
            print(f"{args.config}: ok")
            return EXIT_OK
        if args.command == "oracle":
            print(json.dumps(oracle_report(cfg), indent=2, sort_keys=True))
            return EXIT_OK
    except MECBanditError as e:
        # Infeasible or degenerate instances are configuration problems too.
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        result = run_experiment(cfg, progress=not args.quiet)
    except ConfigError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except MECBanditError as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIMULATION
    print(f"wrote {cfg.replications} replica(s) to {result.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
