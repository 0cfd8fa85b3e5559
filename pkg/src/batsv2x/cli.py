"""Command-line entry point: ``simulate --config cfg.yaml --experiment delay --out results``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import SimConfig, load_config
from .errors import BatsError, ConfigError
from .harness import EXPERIMENTS, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_SIM = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simulate", description=__doc__)
    ap.add_argument("--config", help="YAML file of overrides (defaults if omitted)")
    ap.add_argument("--seed", type=int, help="first trial seed (overrides the config)")
    ap.add_argument("--trials", type=int, help="number of seeds (overrides the config)")
    ap.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    ap.add_argument("--out", required=True, help="output directory for the CSV files")
    ap.add_argument("--trace", action="store_true", help="also write per-packet and per-slot traces")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
        overrides = {}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            overrides["seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if overrides:
            cfg = cfg.replace(**overrides)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        path = run_experiment(cfg, args.experiment, args.out, trace=args.trace)
    except (BatsError, ValueError, RuntimeError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
