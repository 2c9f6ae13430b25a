"""
Read-only run report.

Reads the training logs and eval CSV of a run directory and writes, under
run_dir/report/ only:
- summary.csv: one metric per row
- loss_curves.png: SFT losses per step
- reward_curve.png: GRPO mean reward per iteration with a +-std band
"""

import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from lastlab.config.settings import LOG_FORMAT
from lastlab.store.runlog import CsvLog, read_csv_log

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("metric", "value")


@dataclass
class RunReport:
    run_dir: Path
    metrics: Dict[str, float] = field(default_factory=dict)
    plots: List[Path] = field(default_factory=list)
    summary_path: Optional[Path] = None


def _column(rows: Sequence[dict], key: str) -> List[float]:
    return [float(r[key]) for r in rows if r.get(key, "") != ""]


def reward_oscillation(mean_rewards: Sequence[float]) -> float:
    """Population std of the mean reward over the last half of the iterations."""
    tail = list(mean_rewards)[len(mean_rewards) // 2:]
    if len(tail) < 2:
        return 0.0
    return float(statistics.pstdev(tail))


def reward_improvement(mean_rewards: Sequence[float]) -> float:
    """Relative gain of the best iteration over iteration 0 (nan when undefined)."""
    if not mean_rewards or mean_rewards[0] == 0:
        return math.nan
    return (max(mean_rewards) - mean_rewards[0]) / abs(mean_rewards[0])


def plot_losses(rows: Sequence[dict], path: Path) -> Path:
    steps = _column(rows, "step")
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("ce", "l_wm", "l_3d", "total"):
        ax.plot(steps, _column(rows, key), label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("SFT losses")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_rewards(rows: Sequence[dict], path: Path) -> Path:
    iters = _column(rows, "iter")
    mean = _column(rows, "mean_reward")
    std = _column(rows, "reward_std")
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, mean, label="mean reward")
    ax.fill_between(iters, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)], alpha=0.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("reward")
    ax.legend()
    ax.set_title("GRPO reward")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def render_report(run_dir: Path) -> RunReport:
    """
    Summarise whatever logs exist in `run_dir`. Missing logs are skipped.

    Raises:
        FileNotFoundError: `run_dir` does not exist.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    out_dir = run_dir / "report"
    out_dir.mkdir(exist_ok=True)
    report = RunReport(run_dir=run_dir)
    config_hash = ""

    sft_path = run_dir / "sft_log.csv"
    if sft_path.exists():
        header, rows = read_csv_log(sft_path)
        config_hash = header.get("config_hash", config_hash)
        if rows:
            report.metrics["sft_steps"] = float(len(rows))
            for key in ("ce", "l_wm", "l_3d"):
                values = _column(rows, key)
                report.metrics[f"sft_{key}_first"] = values[0]
                report.metrics[f"sft_{key}_last"] = values[-1]
            report.plots.append(plot_losses(rows, out_dir / "loss_curves.png"))

    rl_path = run_dir / "rl_log.csv"
    if rl_path.exists():
        header, rows = read_csv_log(rl_path)
        config_hash = header.get("config_hash", config_hash)
        if rows:
            rewards = _column(rows, "mean_reward")
            report.metrics["rl_iterations"] = float(len(rows))
            report.metrics["rl_reward_first"] = rewards[0]
            report.metrics["rl_reward_best"] = max(rewards)
            report.metrics["rl_reward_improvement"] = reward_improvement(rewards)
            report.metrics["rl_reward_oscillation"] = reward_oscillation(rewards)
            report.plots.append(plot_rewards(rows, out_dir / "reward_curve.png"))

    eval_path = run_dir / "eval.csv"
    if eval_path.exists():
        header, rows = read_csv_log(eval_path)
        config_hash = header.get("config_hash", config_hash)
        summary = [r for r in rows if r.get("scene_id") == "summary"]
        if summary:
            for key, value in summary[0].items():
                if key in ("scene_id", "difficulty", "error_code") or value == "":
                    continue
                report.metrics[f"eval_{key}"] = float(value)

    log = CsvLog(out_dir / "summary.csv", SUMMARY_COLUMNS, config_hash, fmt=LOG_FORMAT)
    for key, value in report.metrics.items():
        log.append({"metric": key, "value": value})
    report.summary_path = log.path
    logger.info(f"Report for {run_dir}: {len(report.metrics)} metrics, {len(report.plots)} plots")
    return report
