"""
Checkpoint evaluation on a held-out split.

Features:
- Greedy plan per scene with constant-velocity fallback on malformed answers
- Closed-loop sub-scores, PDMS and EPDMS per scene
- Replanning consistency: re-plan after executing part of the first plan
- Open-loop L2 / collision at 1, 2 and 3 s
- CSV report with one row per scene plus a summary row
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from lastlab.config.run_config import RunConfig
from lastlab.config.settings import EVAL_FORMAT
from lastlab.metrics.aggregate import aggregate, mean
from lastlab.metrics.closed_loop import epdms, ext_sub_scores, pdms
from lastlab.metrics.open_loop import open_loop
from lastlab.policy.bundle import PolicyBundle
from lastlab.policy.decoding import PlanOutcome, plan
from lastlab.policy.layout import SceneInputs, prompt_tokens, scene_inputs
from lastlab.store.runlog import CsvLog
from lastlab.world.raster import rasterize
from lastlab.world.samples import SceneSample
from lastlab.world.scene import SceneRecord, advance_scene

logger = logging.getLogger(__name__)

EVAL_COLUMNS = (
    "scene_id", "difficulty", "fallback", "error_code",
    "nc", "dac", "ttc", "cf", "ep", "ddc", "tlc", "lk", "hc", "ec", "ec_defaulted",
    "pdms", "epdms",
    "l2_1s", "l2_2s", "l2_3s", "l2_avg",
    "collision_1s", "collision_2s", "collision_3s", "collision_avg",
)

# Columns averaged into the summary row
SUMMARY_COLUMNS = EVAL_COLUMNS[4:]

# Above this share of fallback plans the report is flagged
FALLBACK_FLAG_RATE = 0.5

# Sub-metrics that are micro-world stand-ins for simulator definitions
PROXY_METRICS = ("ttc", "cf", "ep", "ddc", "tlc", "lk", "hc", "ec")


@dataclass
class EvalReport:
    path: Optional[Path]
    rows: List[Dict[str, object]]
    summary: Dict[str, float]
    fallback_rate: float
    flagged: bool = False
    incidents: Dict[str, object] = field(default_factory=dict)

    @property
    def pdms(self) -> float:
        return self.summary["pdms"]

    @property
    def epdms(self) -> float:
        return self.summary["epdms"]


def replan_inputs(scene: SceneRecord, config: RunConfig) -> SceneInputs:
    """Policy inputs for a scene that has no cached raster."""
    return SceneInputs(
        raster=rasterize(scene, 0.0, config.world),
        prompt=prompt_tokens(scene, config),
        ego_speed=float(scene.ego_state.velocity),
    )


def replan_points(bundle: PolicyBundle, scene: SceneRecord, outcome: PlanOutcome,
                  config: RunConfig) -> np.ndarray:
    """
    Execute `replan_dt` seconds of the first plan, plan again from there and
    return the new waypoints in the original ego frame.
    """
    dt = config.metrics.replan_dt
    advanced = advance_scene(scene, outcome.trajectory, dt, config.world.waypoint_dt)
    second = plan(bundle.model, bundle.vocab, replan_inputs(advanced.scene, config), config)
    return advanced.to_parent(second.trajectory.waypoints)


def score_scene(bundle: PolicyBundle, sample: SceneSample, config: RunConfig) -> Dict[str, object]:
    scene = sample.scene
    outcome = plan(bundle.model, bundle.vocab, scene_inputs(sample, config), config)
    points = replan_points(bundle, scene, outcome, config) if config.metrics.replan_check else None

    ext = ext_sub_scores(scene, outcome.trajectory, config.metrics, points, config.world.waypoint_dt)
    ol = open_loop(outcome.trajectory, scene.gt_trajectory, scene, config.metrics, config.world.waypoint_dt)

    row: Dict[str, object] = {
        "scene_id": scene.scene_id,
        "difficulty": scene.difficulty,
        "fallback": outcome.fallback,
        "error_code": outcome.error_code or "",
    }
    row.update(ext.as_dict())
    row["pdms"] = pdms(ext)
    row["epdms"] = epdms(ext)
    row.update(ol.as_dict())
    return row


@torch.no_grad()
def evaluate(bundle: PolicyBundle, samples: Sequence[SceneSample], config: Optional[RunConfig] = None,
             path: Optional[Path] = None) -> EvalReport:
    """
    Score every scene and (when `path` is given) write the eval CSV.

    The summary PDMS/EPDMS are means of the per-scene scores.

    Raises:
        ValueError: no scenes to evaluate.
    """
    config = config or bundle.config
    if not samples:
        raise ValueError("evaluation needs at least one scene")
    bundle.model.eval()

    rows = []
    for i, sample in enumerate(samples):
        rows.append(score_scene(bundle, sample, config))
        if (i + 1) % 25 == 0:
            logger.info(f"Evaluated {i + 1}/{len(samples)} scenes")

    scores = aggregate(
        [float(r["pdms"]) for r in rows],
        [{c: float(r[c]) for c in SUMMARY_COLUMNS} for r in rows],
    )
    summary = dict(scores.sub_means)
    fallback_rate = mean(float(r["fallback"]) for r in rows)
    flagged = fallback_rate > FALLBACK_FLAG_RATE
    if flagged:
        logger.warning(f"High fallback rate: {fallback_rate:.1%} of plans were malformed")

    report = EvalReport(path=None, rows=rows, summary=summary, fallback_rate=fallback_rate, flagged=flagged)
    if path is not None:
        report.path = write_eval_csv(path, report, config)
    logger.info(
        f"Eval: PDMS={summary['pdms']:.4f} EPDMS={summary['epdms']:.4f} "
        f"fallback={fallback_rate:.1%} over {len(rows)} scenes"
    )
    return report


def write_eval_csv(path: Path, report: EvalReport, config: RunConfig) -> Path:
    m = config.metrics
    header = {
        "scenes": str(len(report.rows)),
        "fallback_rate": repr(report.fallback_rate),
        "fallback_flag": "high" if report.flagged else "ok",
        "proxies": ",".join(PROXY_METRICS),
        "ec": "replanned" if m.replan_check else "defaulted",
        "thresholds": (
            f"radius={m.ego_radius},step={m.step},ttc={m.ttc_horizon},"
            f"accel={m.max_accel},jerk={m.max_jerk}"
        ),
        "goal_tiers": ",".join(repr(t) for t in config.grpo.goal_tiers),
    }
    log = CsvLog(path, EVAL_COLUMNS, config.config_hash, fmt=EVAL_FORMAT, extra_header=header)
    for row in report.rows:
        log.append(row)
    summary_row: Dict[str, object] = {"scene_id": "summary", "difficulty": "all", "fallback": report.fallback_rate}
    summary_row.update(report.summary)
    log.append(summary_row)
    return log.path
