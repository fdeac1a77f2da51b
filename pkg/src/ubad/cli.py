"""Command-line entry point: ``ubad {simulate,sweep,bounds,validate}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import List, Optional

from ubad.harness import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    preset,
    restrict_to_first_point,
    run_bounds,
    run_experiment,
)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=PRESETS, help="start from a named preset")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--policy", help="comma-separated subset of ubad,greedy,passive")
    p.add_argument("--solver", choices=("als", "softimpute"))
    p.add_argument("--beta", type=float, help="weight of the uncertainty term")
    p.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ubad", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "run the first sweep point of a config"),
        ("sweep", "run every sweep point of a config"),
        ("bounds", "evaluate error bounds and Latin-squares lemma checks"),
    ]:
        _common(sub.add_parser(name, help=help_))
    v = sub.add_parser("validate", help="run the structural invariant suite")
    v.add_argument("--trials", type=int, help="trials for the reproducibility run (default: preset's)")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.out is not None:
        overrides["out"] = args.out
    if args.policy:
        overrides["policies"] = [p.strip() for p in args.policy.split(",") if p.strip()]
    if args.solver:
        overrides["solver"] = dataclasses.replace(cfg.solver, kind=args.solver)
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.workers is not None:
        overrides["workers"] = args.workers
    try:
        cfg = dataclasses.replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def _print_summary(result) -> None:
    for c in result.cells:
        a = c.aggregate
        stats = f"final {a.final_mean:.4f} +- {a.final_stderr:.4f}" if a else "no successful trials"
        print(f"{c.policy:8s} spread={c.spread:<6g} sigma_n={c.sigma_n:<6g} {stats} "
              f"(ok {len(c.traces)}, failed {len(c.failed)})")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            from ubad.checks import run_all

            results = run_all(reproducibility_trials=args.trials)
            return 0 if all(r.passed for r in results) else 1
        cfg = load_config(args)
        if args.command == "bounds":
            for r in run_bounds(cfg):
                print(", ".join(f"{k}={v}" for k, v in r.items()))
            return 0
        if args.command == "simulate":
            cfg = restrict_to_first_point(cfg)
        result = run_experiment(cfg)
        _print_summary(result)
        if cfg.out:
            print(f"wrote results to {cfg.out} (config {cfg.config_hash()})")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
