"""
Ablation runner.

Each axis is a list of arms (config overrides). Every arm runs the full
pipeline once per seed in its own run directory; the comparison table holds
per-seed scores and per-arm medians. A crashing arm/seed is marked failed
and the rest of the table is still written.
"""

import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from lastlab.config.run_config import RunConfig, apply_overrides
from lastlab.config.settings import LOG_FORMAT
from lastlab.services.pipeline import PipelineResult, run_pipeline
from lastlab.store.runlog import CsvLog
from lastlab.utils.logging_config import error_tracker
from lastlab.utils.reliability import classify_error

logger = logging.getLogger(__name__)

Arm = Tuple[str, Tuple[str, ...]]

AXES: Dict[str, Tuple[Arm, ...]] = {
    "supervision": (
        ("with_sup", ("run.reasoning=latent", "run.latent_supervision=on")),
        ("without_sup", ("run.reasoning=latent", "run.latent_supervision=off")),
    ),
    "reasoning": (
        ("latent", ("run.reasoning=latent",)),
        ("none", ("run.reasoning=none", "run.latent_supervision=off", "run.alignment=both")),
    ),
    "mask": (
        ("structured", ("run.mask=structured",)),
        ("standard", ("run.mask=standard",)),
    ),
    "token_counts": (
        ("wm3x12_3d6", ("latent.wm_groups=3", "latent.n_wm=12", "latent.n_3d=6")),
        ("wm3x12_3d24", ("latent.wm_groups=3", "latent.n_wm=12", "latent.n_3d=24")),
        ("wm3x6_3d12", ("latent.wm_groups=3", "latent.n_wm=6", "latent.n_3d=12")),
        ("wm3x24_3d12", ("latent.wm_groups=3", "latent.n_wm=24", "latent.n_3d=12")),
        ("wm3x12_3d12", ("latent.wm_groups=3", "latent.n_wm=12", "latent.n_3d=12")),
    ),
    "alignment": (
        ("both", ("run.alignment=both",)),
        ("geo_only", ("run.alignment=geo_only",)),
        ("wm_only", ("run.alignment=wm_only",)),
    ),
}

DEFAULT_SEEDS = (0, 1, 2)

SCORE_COLUMNS = ("pdms", "epdms", "nc", "dac", "ttc", "cf", "ep", "ddc", "tlc", "lk", "hc", "ec")
ABLATION_COLUMNS = ("arm", "seed", "status", "error") + SCORE_COLUMNS + ("fallback_rate",)

Runner = Callable[[RunConfig, Path], PipelineResult]


@dataclass
class ArmResult:
    arm: str
    seed: int
    status: str  # "ok" or "failed"
    scores: Dict[str, float] = field(default_factory=dict)
    fallback_rate: Optional[float] = None
    error: str = ""

    def as_row(self) -> dict:
        row = {"arm": self.arm, "seed": self.seed, "status": self.status, "error": self.error}
        row.update(self.scores)
        if self.fallback_rate is not None:
            row["fallback_rate"] = self.fallback_rate
        return row


@dataclass
class AblationReport:
    axis: str
    results: List[ArmResult]
    medians: Dict[str, Dict[str, float]]
    path: Optional[Path] = None

    @property
    def failed(self) -> List[ArmResult]:
        return [r for r in self.results if r.status != "ok"]


def arms_for(axis: str) -> Tuple[Arm, ...]:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    return AXES[axis]


def arm_medians(results: Sequence[ArmResult]) -> Dict[str, Dict[str, float]]:
    """Median of every score column over the successful seeds of each arm."""
    medians: Dict[str, Dict[str, float]] = {}
    for arm in dict.fromkeys(r.arm for r in results):
        done = [r for r in results if r.arm == arm and r.status == "ok"]
        if not done:
            continue
        medians[arm] = {
            c: float(statistics.median(r.scores[c] for r in done)) for c in SCORE_COLUMNS if c in done[0].scores
        }
    return medians


def run_arm(name: str, overrides: Sequence[str], seed: int, base_config: RunConfig,
            run_root: Path, runner: Runner) -> ArmResult:
    try:
        config = apply_overrides(base_config, list(overrides) + [f"run.seed={seed}"])
        result = runner(config, Path(run_root) / name / f"seed{seed}")
    except Exception as e:
        error_tracker.record(e, context=f"ablation arm {name} seed {seed}")
        logger.error(f"Arm {name} (seed {seed}) failed: {e}")
        return ArmResult(arm=name, seed=seed, status="failed", error=classify_error(e))
    scores = {c: float(result.summary[c]) for c in SCORE_COLUMNS if c in result.summary}
    return ArmResult(arm=name, seed=seed, status="ok", scores=scores, fallback_rate=result.fallback_rate)


def run_ablation(axis: str, base_config: RunConfig, run_root: Path,
                 seeds: Sequence[int] = DEFAULT_SEEDS, runner: Optional[Runner] = None) -> AblationReport:
    """
    Run every arm of `axis` under identical seeds and write ablation_<axis>.csv.

    Args:
        axis: one of AXES.
        base_config: config the arm overrides apply to.
        run_root: parent directory of the per-arm run directories.
        seeds: run seeds, shared by all arms.
        runner: unit of work per (arm, seed); defaults to the full pipeline.

    Returns:
        AblationReport with per-seed results and per-arm medians.
    """
    runner = runner or run_pipeline
    run_root = Path(run_root)
    results = []
    for name, overrides in arms_for(axis):
        for seed in seeds:
            logger.info(f"Ablation {axis}: arm {name}, seed {seed}")
            results.append(run_arm(name, overrides, seed, base_config, run_root, runner))

    medians = arm_medians(results)
    report = AblationReport(axis=axis, results=results, medians=medians)
    report.path = write_ablation_csv(run_root / f"ablation_{axis}.csv", report, base_config)
    if report.failed:
        logger.warning(f"Ablation {axis}: {len(report.failed)} of {len(results)} runs failed")
    return report


def write_ablation_csv(path: Path, report: AblationReport, base_config: RunConfig) -> Path:
    log = CsvLog(
        path, ABLATION_COLUMNS, base_config.config_hash, fmt=LOG_FORMAT,
        extra_header={"axis": report.axis, "failed": str(len(report.failed))},
    )
    for result in report.results:
        log.append(result.as_row())
    for arm, scores in report.medians.items():
        row = {"arm": arm, "seed": "median", "status": "ok"}
        row.update(scores)
        log.append(row)
    return log.path
