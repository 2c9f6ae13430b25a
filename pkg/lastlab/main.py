"""
lastlab - command-line entry point.

Usage:
    python -m lastlab.main gen-data [--config PATH] [--set key=value ...] [--seed N] [--run-dir PATH]
    python -m lastlab.main sft | rl | eval | report | ablate --axis AXIS

Exit status: 0 on success, 2 for an invalid config or command line,
3 for a missing checkpoint, 1 otherwise. Failures also print a one-line
JSON error record on stderr.
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from lastlab.config.run_config import RunConfig, load_config
from lastlab.config.settings import LOG_LEVEL, default_run_root, validate_config
from lastlab.services import pipeline
from lastlab.services.ablation import AXES, DEFAULT_SEEDS, run_ablation
from lastlab.services.report import render_report
from lastlab.store.runlog import write_run_meta
from lastlab.utils.logging_config import error_tracker, setup_logging
from lastlab.utils.reliability import ConfigError, classify_error, exit_code_for

logger = logging.getLogger(__name__)

COMMANDS = ("gen-data", "sft", "rl", "eval", "report", "ablate")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--seed", type=int, help="run seed (same as --set run.seed=N)")
    common.add_argument("--run-dir", type=Path, help="run directory (default: $LASTLAB_RUN_ROOT/<config hash>)")

    parser = argparse.ArgumentParser(prog="lastlab", description="Latent reasoning planner on a 2D micro-world")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write easy/hard/eval scene datasets")
    sub.add_parser("sft", parents=[common], help="two-phase supervised fine-tuning")
    sub.add_parser("rl", parents=[common], help="GRPO from the SFT checkpoint")
    eval_parser = sub.add_parser("eval", parents=[common], help="score a checkpoint on the eval split")
    eval_parser.add_argument("--checkpoint", help="checkpoint file (default: rl.pt, else sft.pt)")
    sub.add_parser("report", parents=[common], help="summary CSV and plots (read-only)")
    ablate = sub.add_parser("ablate", parents=[common], help="run one ablation axis")
    ablate.add_argument("--axis", required=True, choices=sorted(AXES))
    ablate.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    return parser


def resolve_run_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.run_dir is not None:
        return Path(args.run_dir)
    return default_run_root() / config.config_hash[:12]


def error_record(exc: Exception, command: Optional[str]) -> dict:
    record = {"status": "error", "command": command, "kind": classify_error(exc), "message": str(exc)}
    if isinstance(exc, ConfigError):
        record["fields"] = exc.messages
    return record


def dispatch(args: argparse.Namespace, config: RunConfig, run_dir: Path) -> dict:
    command = args.command
    if command == "gen-data":
        paths = pipeline.generate_data(config, run_dir)
        return {split: str(path) for split, path in paths.items()}
    if command == "sft":
        result = pipeline.run_sft_stage(config, run_dir)
        return {"checkpoint": str(result.checkpoint), "steps": result.steps}
    if command == "rl":
        result = pipeline.run_rl_stage(config, run_dir)
        return {"checkpoint": str(result.checkpoint), "iterations": len(result.history)}
    if command == "eval":
        report = pipeline.run_eval_stage(config, run_dir, args.checkpoint)
        return {"pdms": report.pdms, "epdms": report.epdms, "fallback_rate": report.fallback_rate,
                "fallback_flag": report.flagged}
    if command == "report":
        report = render_report(run_dir)
        return {"summary": str(report.summary_path), "plots": [str(p) for p in report.plots]}
    if command == "ablate":
        report = run_ablation(args.axis, config, run_dir, seeds=args.seeds)
        return {"table": str(report.path), "failed": len(report.failed)}
    raise ValueError(f"unknown command {command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    """Parse, run one command and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    started = datetime.now(timezone.utc)
    try:
        validate_config()
        config = load_config(args.config, args.overrides, args.seed)
    except ConfigError as e:
        for message in e.messages:
            print(f"config error: {message}", file=sys.stderr)
        print(json.dumps(error_record(e, args.command)), file=sys.stderr)
        return exit_code_for(e)

    run_dir = resolve_run_dir(args, config)
    run_tag = f"{args.command}:{config.config_hash[:12]}"
    if args.command == "report":
        # report only ever writes under <run_dir>/report
        if not run_dir.is_dir():
            e = FileNotFoundError(f"run directory not found: {run_dir}")
            print(json.dumps(error_record(e, args.command)), file=sys.stderr)
            return exit_code_for(e)
        setup_logging(run_dir / "report" / "logs", LOG_LEVEL, run_tag=run_tag)
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        setup_logging(run_dir / "logs", LOG_LEVEL, run_tag=run_tag)
    logger.info(f"lastlab {args.command}: run_dir={run_dir} config={config.config_hash[:12]}")
    if args.command != "report":
        pipeline.write_snapshot(config, run_dir)

    error_tracker.reset()
    try:
        outcome = dispatch(args, config, run_dir)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(json.dumps(error_record(e, args.command)), file=sys.stderr)
        if args.command != "report":
            write_run_meta(run_dir, args.command, config.config_hash, "error", started,
                           {"error": error_record(e, args.command)})
        return exit_code_for(e)

    if args.command != "report":
        write_run_meta(run_dir, args.command, config.config_hash, "ok", started,
                       {"outcome": outcome, "incidents": error_tracker.get_summary()})
    logger.info(f"{args.command} done: {json.dumps(outcome, sort_keys=True)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
