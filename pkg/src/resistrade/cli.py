"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resistrade",
                                description="Optimal trading with transient impact and market resistance.")
    p.add_argument("--config", required=True, help="YAML configuration file (may be empty)")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="override the experiment kind")
    p.add_argument("--seed", type=int, help="override the Monte Carlo seed")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--quiet", action="store_true", help="do not print the run summary")
    return p


def cli_entry(argv=None) -> int:
    """Parse flags, load the configuration and run it. Returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        over = {}
        if args.experiment:
            over["experiment"] = args.experiment
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("mc.seed: must be >= 0")
            over["mc.seed"] = args.seed
        if over:
            cfg = cfg.replace(**over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    status, summary = run_experiment(cfg, args.out)
    if not args.quiet:
        print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=2, default=float))
    if status:
        print("solver did not converge; artifacts were written", file=sys.stderr)
    return status


def main():
    sys.exit(cli_entry())


if __name__ == "__main__":
    main()
