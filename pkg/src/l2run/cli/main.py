"""Command line: ``l2run train|eval|mine|blend|serve|sample``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort (the last
checkpoint is kept), 4 corrupt or missing checkpoint.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from ..errors import CheckpointError, ConfigurationError, NumericError
from . import runner
from .config import PRESETS, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4

log = logging.getLogger("l2run")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment JSON document")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in hyperparameter preset under --config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="l2run", description="Train and evaluate runners on the symmetric runner environment.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the configured algorithm")
    _config_args(p)
    p.add_argument("--out", required=True, help="run directory (metrics.csv, checkpoint.*)")

    p = sub.add_parser("eval", help="noise-free evaluation of checkpoints")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint directory or file; repeat to pool ensemble members")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0, help="first evaluation seed")
    p.add_argument("--composition", action="append", help="ensemble composition such as A10C10; repeatable")
    p.add_argument("--out", default=".")

    p = sub.add_parser("mine", help="tabulate the binarized actions of a policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=".")

    p = sub.add_parser("blend", help="evaluate a blend of two policies or a scheduled switch between them")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="give twice: first the policy weighted by alpha (or handing over), then the other")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--alpha", type=float)
    mode.add_argument("--switch-n", type=int, help="handover length in steps (150 is typical)")
    p.add_argument("--switch-start", type=int, default=0, help="step at which the handover begins")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")

    p = sub.add_parser("serve", help="learner only; samplers connect over TCP")
    _config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--addr", help="host:port to listen on")

    p = sub.add_parser("sample", help="sampler only; connects to a learner")
    _config_args(p)
    p.add_argument("--addr", help="learner host:port (the L2R_LEARNER_ADDR variable takes precedence)")
    p.add_argument("--sampler-id", type=int, default=0)
    p.add_argument("--n-samplers", type=int, default=1)
    p.add_argument("--episodes", type=int, help="stop after this many episodes")
    p.add_argument("--give-up-after", type=float, help="seconds of failed reconnects before exiting")
    return parser


def _print_summaries(summaries: list[dict]) -> None:
    if not summaries:
        print("no episodes evaluated")
    for s in summaries:
        print(f"{s['composition']}: tests {s['tests']}  mean {s['mean_return']:.4f}  max {s['max_return']:.4f}  "
              f"falls {s['falls']}")


def run(args: argparse.Namespace) -> int:
    if args.command == "train":
        cfg = load_config(args.config, args.preset, args.seed)
        stats = runner.train(cfg, Path(args.out))
        print(f"trained {stats['episodes']} episodes, {stats['env_steps']} steps, {stats['updates']} updates")
    elif args.command == "serve":
        cfg = load_config(args.config, args.preset, args.seed)
        stats = runner.serve(cfg, Path(args.out), args.addr)
        print(f"served {stats['episodes']} episodes, {stats['updates']} updates")
    elif args.command == "sample":
        cfg = load_config(args.config, args.preset, args.seed)
        sent = runner.sample(cfg, args.addr, args.sampler_id, args.n_samplers, args.episodes, args.give_up_after)
        print(f"sent {sent} episodes")
    elif args.command == "eval":
        if args.episodes < 0:
            raise ConfigurationError("episodes must be non-negative")
        _print_summaries(runner.run_eval(args.checkpoint, args.episodes, args.seed, args.composition,
                                         Path(args.out)))
    elif args.command == "mine":
        if args.episodes < 0:
            raise ConfigurationError("episodes must be non-negative")
        table = runner.run_mine(args.checkpoint, args.episodes, args.seed, args.threshold, Path(args.out))
        sat = "n/a" if math.isnan(table.saturation) else f"{100 * table.saturation:.1f}%"
        print(f"{len(table)} unique patterns over {table.total} actions; saturation {sat}")
    elif args.command == "blend":
        if args.episodes < 0:
            raise ConfigurationError("episodes must be non-negative")
        _print_summaries(runner.run_blend(args.checkpoint, args.alpha, args.switch_n, args.switch_start,
                                          args.episodes, args.seed, Path(args.out)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}; the last checkpoint was kept", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
