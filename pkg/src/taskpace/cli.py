"""Command-line harness.

Subcommands: ``run``, ``compare-metrics``, ``sweep``, ``report``.
Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 I/O or log-parse failure, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig
from .errors import ConfigError, DivergenceError, InvalidInputError, LogParseError
from .runner import run_compare_metrics, run_report, run_sweep, run_training

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (defaults used when omitted)")
    p.add_argument("--seed", type=int, required=True,
                   help="master seed (required: runs must be explicitly reproducible)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--steps", type=int, help="override total_steps")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskpace",
        description="Self-paced multitask training experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one training run")
    _add_run_options(run)
    run.add_argument("--strategy", choices=["self-paced", "alternation", "shuffled"])
    run.add_argument("--alpha", type=float, help="switch-test multiplier")
    run.add_argument("--w", type=float, dest="smoothing_weight",
                     help="exponential smoothing weight")
    run.add_argument("--hrl-warmup", choices=["on", "off"],
                     help="restrict scheduling to HRL tasks during warmup")
    run.add_argument("--profile", choices=["default", "regularized"],
                     help="trainer profile")
    run.add_argument("--resume", help="resume from a checkpoint (.npz)")

    cmp = sub.add_parser("compare-metrics",
                         help="train on one task and tabulate all metric variants")
    _add_run_options(cmp)

    sweep = sub.add_parser("sweep", help="run once per hyperparameter value")
    _add_run_options(sweep)
    sweep.add_argument("--param", choices=["w", "alpha"], required=True)
    sweep.add_argument("--values", required=True,
                       help="comma-separated list, e.g. 0.99,0.995,0.999")

    report = sub.add_parser("report", help="summarize a run log")
    report.add_argument("--log", required=True, help="run log (JSONL)")
    report.add_argument("--out", help="directory for the CSV tables")
    return parser


def _load_config(args) -> RunConfig:
    overrides = {"seed": args.seed}
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "steps", None):
        overrides["total_steps"] = args.steps
    if getattr(args, "strategy", None):
        overrides["strategy"] = args.strategy
    if getattr(args, "alpha", None) is not None:
        overrides["alpha"] = args.alpha
    if getattr(args, "smoothing_weight", None) is not None:
        overrides["smoothing_weight"] = args.smoothing_weight
    if getattr(args, "hrl_warmup", None):
        overrides["hrl_warmup"] = args.hrl_warmup == "on"
    if getattr(args, "profile", None):
        overrides["trainer.profile"] = args.profile
    return RunConfig.from_file(args.config, overrides)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_config(args)
            result = run_training(cfg, resume_from=args.resume, verbose=True)
            print(f"log: {result.log_path}")
        elif args.command == "compare-metrics":
            cfg = _load_config(args)
            result = run_compare_metrics(cfg, verbose=True)
            print(f"log: {result.log_path}")
            print(f"tables: {result.out_dir / 'metrics.csv'}")
        elif args.command == "sweep":
            cfg = _load_config(args)
            values = [float(v) for v in args.values.split(",") if v.strip()]
            _, csv_path = run_sweep(cfg, args.param, values, verbose=True)
            print(f"table: {csv_path}")
        elif args.command == "report":
            run_report(args.log, out_dir=args.out, verbose=True)
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (LogParseError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
