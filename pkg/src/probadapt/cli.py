"""Command line front end.

Subcommands:
  run <config>             execute the config's mode pipeline
  grid <config> --axis A   one run per point of an ablation axis
  fig1 <config>            domain-gap comparison (mode forced to fig1)
  selftest                 built-in invariant checks

Exit codes: 0 success, 2 configuration error, 3 training divergence,
1 selftest failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, ContractViolationError
from .runner import GRID_AXES, run_experiment, run_grid
from .selftest import run_selftest

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _load_config(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="probadapt",
                                     description="probability-space domain adaptation runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")

    p_grid = sub.add_parser("grid", help="run an ablation grid from a base config")
    p_grid.add_argument("config")
    p_grid.add_argument("--axis", required=True, choices=GRID_AXES)

    p_fig1 = sub.add_parser("fig1", help="feature-space vs probability-space domain gap")
    p_fig1.add_argument("config")

    sub.add_parser("selftest", help="run the built-in invariant checks")

    args = parser.parse_args(argv)

    if args.command == "selftest":
        return EXIT_OK if run_selftest() else EXIT_SELFTEST

    try:
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            record = run_experiment(cfg)
            records = [record]
        elif args.command == "grid":
            records = run_grid(cfg, args.axis)
        else:  # fig1
            record = run_experiment(replace(cfg, mode="fig1"))
            records = [record]
    except (ConfigError, ContractViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    worst = EXIT_OK
    for rec in records:
        line = f"[{rec.status}] mode={rec.mode} seed={rec.seed} out={rec.out_dir}"
        if "final_target_accuracy" in rec.summary:
            line += f" target_acc={rec.summary['final_target_accuracy']:.4f}"
        print(line)
        if rec.status != "complete":
            worst = EXIT_DIVERGED
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
