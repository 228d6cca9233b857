"""Command-line entry point: ``dtsync <study> [--config ...] [--seed ...] [--out ...]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments import (ExperimentConfig, run_budget_sweep, run_consumption_distribution,
                          run_convergence_experiment, run_device_scaling, run_oracle_cmdp,
                          run_oracle_spi, write_outputs)

COMMANDS = {
    "convergence": run_convergence_experiment,
    "budget-sweep": run_budget_sweep,
    "device-scaling": run_device_scaling,
    "consumption": run_consumption_distribution,
    "oracle-cmdp": run_oracle_cmdp,
    "oracle-spi": run_oracle_spi,
}


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtsync", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--seed", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")
        s.add_argument("--out", help="output directory")
        s.add_argument("--episodes", type=int)
        s.add_argument("--slots", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        cfg.scenario = args.command
        if args.seed:
            cfg.seeds = args.seed
        if args.out:
            cfg.out = args.out
        if args.episodes is not None:
            cfg.episodes = args.episodes
        if args.slots is not None:
            cfg.slots = args.slots
        cfg.__post_init__()
        result = COMMANDS[args.command](cfg)
        out = write_outputs(cfg.out, args.command, cfg, result)
    except Exception as exc:  # any failure must surface as a nonzero exit
        logging.getLogger("dtsync").error("%s: %s", type(exc).__name__, exc)
        return 1
    print(out / "report.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
