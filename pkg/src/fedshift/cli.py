"""Command line entry point.

Subcommands: pretrain, cluster, federate, baseline, pipeline, eval.
Exit codes: 0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, FedShiftError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedshift",
        description="Federated domain-adaptation simulator on synthetic data")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("pretrain", "stage 1: supervised source-domain training"),
        ("cluster", "stage 2: pseudo labels via constrained clustering"),
        ("federate", "stage 3: domain-constrained federated training"),
        ("baseline", "train a reference model (run.baseline selects which)"),
        ("pipeline", "run all three stages"),
        ("eval", "evaluate a checkpoint on the synthetic eval sets"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, default=None,
                         help="config file (defaults used when omitted)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override both synth.seed and fed.master_seed")
        cmd.add_argument("--out", type=Path, default=None,
                         help="override run.output_dir")
        if name == "eval":
            cmd.add_argument("--checkpoint", type=Path, default=None,
                             help="checkpoint to evaluate (default: latest)")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        if not (0 <= args.seed < 2 ** 64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "pretrain":
            pipeline.cmd_pretrain(cfg)
        elif args.command == "cluster":
            pipeline.cmd_cluster(cfg)
        elif args.command == "federate":
            pipeline.cmd_federate(cfg)
        elif args.command == "baseline":
            pipeline.cmd_baseline(cfg)
        elif args.command == "pipeline":
            pipeline.cmd_pipeline(cfg)
        elif args.command == "eval":
            pipeline.cmd_eval(cfg, args.checkpoint)
    except ConfigError as exc:
        print(f"config error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FedShiftError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
