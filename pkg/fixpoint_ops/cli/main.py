# cli/main.py

import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from app import AsyncExperimentApp
from config.config import Config
from models.exceptions import ConfigError, FixpointError
from .models import SUITES, ExperimentConfig, RunReport
from .utils import load_config

logger = logging.getLogger(__name__)

COMMANDS = {
    "certify": "Certify a contractive condition over a sampling plan",
    "search": "Search a (b, theta, L) grid for certified parameters",
    "iterate": "Run Picard or Krasnoselskij iterations and emit convergence tables",
    "sweep": "Run Krasnoselskij over every (lambda, x0) combination",
    "vip": "Solve a variational inequality through its fixed-point form",
    "reproduce": "Run the named reproduction suites",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixpoint-ops",
        description="Certify enriched almost contractions and run fixed-point experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=name != "reproduce", help="Experiment file (.yaml, .yml or .json)")
        cmd.add_argument("--seed", type=int, default=None, help="Seed overriding the experiment seed")
        cmd.add_argument("--out-dir", default=None, help=f"Artifact directory (default {Config.OUTPUT_DIR})")
        cmd.add_argument("--format", choices=["csv", "json", "markdown"], default=None,
                         help="Format of convergence tables")
        if name == "reproduce":
            cmd.add_argument("--suite", action="append", choices=list(SUITES) + ["all"], default=None,
                             help="Suite to run; repeatable (default: all)")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig(schema_version=Config.SCHEMA_VERSION, kind="reproduce",
                                suites=args.suite or ["all"])
    config = load_config(args.config)
    if config.kind != args.command:
        raise ConfigError(
            f"Experiment kind '{config.kind}' does not match command '{args.command}'",
            [{"field": "kind", "message": config.kind}],
        )
    if getattr(args, "suite", None):
        config = config.model_copy(update={"suites": args.suite})
    return config


def print_summary(report: RunReport) -> None:
    for result in report.results:
        mark = {True: "PASS", False: "FAIL", None: "done"}[result.passed]
        print(f"[{mark}] {result.name}" + (f": {result.error}" if result.error else ""))
    for check in report.checks:
        if not check.passed:
            print(f"  failed check {check.suite}/{check.name}: {check.detail}")
    print(f"status: {report.status}")


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns 0 when every check passes, 2 when one fails and 1 on errors."""
    logging.basicConfig(level=Config.LOG_LEVEL)
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        app = AsyncExperimentApp(config, out_dir=args.out_dir, seed=args.seed, format=args.format)
        report = asyncio.run(app.arun())
    except FixpointError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    print_summary(report)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
