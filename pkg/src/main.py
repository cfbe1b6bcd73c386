#!/usr/bin/env python3
"""
SAEmnesia - Main entry point

This module provides the command-line interface for SAEmnesia.
"""

import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from src.saemnesia import __version__
from src.saemnesia.core.config import ConfigError, ConfigManager
from src.saemnesia.core.trainer import TrainingDivergenceError, TrainingError
from src.saemnesia.handlers.commands import commands
from src.saemnesia.store import StoreError
from src.saemnesia.utils.log import get_logger, log_record, setup_logger

OUT_DIR_ENV = "SAEMNESIA_OUT_DIR"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def split_list(value: Optional[str]) -> Optional[List[str]]:
    """``"Bears,Cats"`` -> ``["Bears", "Cats"]``."""
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def resolve_out(out: Optional[str], config: ConfigManager) -> Optional[str]:
    """Relative output paths are placed under output.dir, else $SAEMNESIA_OUT_DIR."""
    if not out or os.path.isabs(out):
        return out
    base = config.get("output.dir") or os.environ.get(OUT_DIR_ENV)
    return os.path.join(base, out) if base else out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for every random stream")
    common.add_argument("--config", default=None, help="JSON run configuration")
    common.add_argument("--out", default=None, help="Output path")

    model_data = argparse.ArgumentParser(add_help=False)
    model_data.add_argument("--model", required=True, help="Checkpoint (.saem)")
    model_data.add_argument("--data", required=True, help="Dataset (.saea)")

    parser = argparse.ArgumentParser(
        prog="saemnesia",
        description="Supervised sparse autoencoders for single-latent concept unlearning",
    )
    parser.add_argument("--version", action="version", version=f"saemnesia {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="Generate a synthetic labeled dataset")

    p = sub.add_parser("train", parents=[common], help="Train one phase or the full pipeline")
    p.add_argument("--phase", choices=("unsup", "sup", "pipeline"), default="pipeline")
    p.add_argument("--data", required=True)
    p.add_argument("--init", default=None, help="Starting checkpoint")
    p.add_argument("--assignment", default=None, help="Concept assignment for the supervised phase")
    p.add_argument("--schedule", choices=("finetune", "from_scratch"), default=None)
    p.add_argument("--supervision", choices=("ca", "global_ce"), default=None)
    p.add_argument("--label-domains", choices=("objects", "objects+styles"), default=None)

    p = sub.add_parser(
        "score", parents=[common, model_data], help="Score every latent for every concept"
    )
    p.add_argument("--assignment", default=None)

    sub.add_parser("assign", parents=[common, model_data], help="Assign each concept to one latent")

    p = sub.add_parser("steer", parents=[common, model_data], help="Build a steering plan")
    p.add_argument("--assignment", required=True)
    p.add_argument(
        "--concepts", default=None, help="Comma-separated concepts (default: all objects)"
    )
    p.add_argument("--multiplier", type=float, default=None)
    p.add_argument("--preset", default=None, help="Named multiplier column")

    p = sub.add_parser("sweep", parents=[common, model_data], help="Search steering multipliers")
    p.add_argument("--plan", required=True)
    p.add_argument("--uniform", action="store_true", help="One shared multiplier for every concept")

    p = sub.add_parser(
        "eval", parents=[common, model_data], help="Evaluate single-concept unlearning"
    )
    p.add_argument("--plan", required=True)
    p.add_argument("--target", default=None, help="Comma-separated targets (default: all in plan)")

    p = sub.add_parser("seq-eval", parents=[common, model_data], help="Sequential unlearning")
    p.add_argument("--plan", required=True)
    p.add_argument("--order", default=None, help="Comma-separated erase order")

    p = sub.add_parser("inspect", parents=[common], help="Summarize an artifact")
    p.add_argument("path")
    return parser


class SaemnesiaCLI:
    """Main CLI class for SAEmnesia."""

    def __init__(self):
        self.parser = build_parser()
        self.commands = {
            "gen-data": self.gen_data,
            "train": self.train,
            "score": self.score,
            "assign": self.assign,
            "steer": self.steer,
            "sweep": self.sweep,
            "eval": self.evaluate,
            "seq-eval": self.seq_eval,
            "inspect": self.inspect,
        }

    def _overrides(self, args: argparse.Namespace) -> Dict[str, Any]:
        overrides: Dict[str, Any] = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        supervised: Dict[str, Any] = {}
        if getattr(args, "supervision", None):
            supervised["supervision"] = args.supervision
        if getattr(args, "label_domains", None):
            supervised["label_domains"] = args.label_domains
        train: Dict[str, Any] = {}
        if supervised:
            train["supervised"] = supervised
        if getattr(args, "schedule", None):
            train["schedule"] = args.schedule
        if train:
            overrides["train"] = train
        return overrides

    def context(self, args: argparse.Namespace) -> commands.CommandContext:
        config = ConfigManager(args.config, overrides=self._overrides(args))
        out = resolve_out(args.out, config)
        log_dir = os.path.dirname(os.path.abspath(out)) if out else None
        logging_cfg = config.get("logging")
        setup_logger(
            log_dir=log_dir,
            level=logging_cfg["level"],
            file_enabled=logging_cfg["file_enabled"],
            console_enabled=logging_cfg["console_enabled"],
        )
        log_record(get_logger(), "config", command=args.command, **config.resolved())
        return commands.CommandContext(config=config, seed=int(config.get("seed")), out=out)

    def gen_data(self, ctx, args):
        return commands.gen_data(ctx)

    def train(self, ctx, args):
        return commands.train(ctx, args.phase, args.data, args.init, args.assignment)

    def score(self, ctx, args):
        return commands.score(ctx, args.model, args.data, args.assignment)

    def assign(self, ctx, args):
        return commands.assign_cmd(ctx, args.model, args.data)

    def steer(self, ctx, args):
        return commands.steer(
            ctx,
            args.model,
            args.data,
            args.assignment,
            split_list(args.concepts),
            args.multiplier,
            args.preset,
        )

    def sweep(self, ctx, args):
        return commands.sweep(ctx, args.model, args.data, args.plan, uniform=args.uniform)

    def evaluate(self, ctx, args):
        return commands.evaluate(ctx, args.model, args.data, args.plan, split_list(args.target))

    def seq_eval(self, ctx, args):
        return commands.seq_eval(ctx, args.model, args.data, args.plan, split_list(args.order))

    def inspect(self, ctx, args):
        return commands.inspect(ctx, args.path)

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        Parse ``argv`` and run one subcommand.

        Returns:
            0 on success, 2 on invalid input, 3 on numerical divergence,
            1 on any other failure
        """
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as e:
            return EXIT_OK if e.code == 0 else EXIT_VALIDATION

        logger = get_logger()
        try:
            ctx = self.context(args)
            summary = self.commands[args.command](ctx, args)
        except TrainingDivergenceError as e:
            logger.error(str(e))
            return EXIT_DIVERGENCE
        except (ConfigError, StoreError, TrainingError, ValueError, FileNotFoundError) as e:
            logger.error(str(e))
            return EXIT_VALIDATION
        except Exception as e:
            logger.exception(f"{args.command} failed: {e}")
            return EXIT_FAILURE

        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for SAEmnesia."""
    load_dotenv()
    cli = SaemnesiaCLI()
    return cli.run(argv)


if __name__ == "__main__":
    sys.exit(main())
