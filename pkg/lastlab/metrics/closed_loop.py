"""
Closed-loop sub-metrics on the micro-world and their PDMS/EPDMS aggregation.

Sub-metrics are micro-world proxies of the usual driving-benchmark
definitions: every gate is binary per scene and ego progress is the only
continuous score.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from lastlab.config.run_config import MetricConfig
from lastlab.tokenizer.codec import Trajectory
from lastlab.world.geometry import closest_approach
from lastlab.world.scene import SceneRecord, position_along, velocity_along

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreWeights:
    progress: float = 5.0
    ttc: float = 5.0
    comfort: float = 2.0
    lane_keeping: float = 2.0
    history_comfort: float = 2.0
    extended_comfort: float = 2.0

    @property
    def pdms_total(self) -> float:
        return self.progress + self.ttc + self.comfort

    @property
    def epdms_total(self) -> float:
        return self.progress + self.lane_keeping + self.history_comfort + self.ttc + self.extended_comfort


WEIGHTS = ScoreWeights()


@dataclass(frozen=True)
class SubScores:
    nc: float
    dac: float
    ttc: float
    cf: float
    ep: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExtSubScores:
    nc: float
    dac: float
    ttc: float
    cf: float
    ep: float
    ddc: float
    tlc: float
    lk: float
    hc: float
    ec: float
    ec_defaulted: bool = False

    @classmethod
    def extend(cls, base: SubScores, ddc: float, tlc: float, lk: float, hc: float, ec: float,
               ec_defaulted: bool = False) -> "ExtSubScores":
        return cls(base.nc, base.dac, base.ttc, base.cf, base.ep, ddc, tlc, lk, hc, ec, ec_defaulted)

    def as_dict(self) -> dict:
        return asdict(self)


def pdms(s: SubScores, weights: ScoreWeights = WEIGHTS) -> float:
    weighted = weights.progress * s.ep + weights.ttc * s.ttc + weights.comfort * s.cf
    return s.nc * s.dac * weighted / weights.pdms_total


def epdms(s: ExtSubScores, weights: ScoreWeights = WEIGHTS) -> float:
    weighted = (
        weights.progress * s.ep
        + weights.lane_keeping * s.lk
        + weights.history_comfort * s.hc
        + weights.ttc * s.ttc
        + weights.extended_comfort * s.ec
    )
    return s.nc * s.dac * s.ddc * s.tlc * weighted / weights.epdms_total


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_times(traj: Trajectory, step: float, waypoint_dt: float = 0.5) -> np.ndarray:
    horizon = len(traj) * waypoint_dt
    n = int(round(horizon / step))
    return step * np.arange(n + 1)


def collision_free(scene: SceneRecord, traj: Trajectory, config: MetricConfig,
                   until: Optional[float] = None, waypoint_dt: float = 0.5) -> bool:
    """No ego/agent disk overlap in continuous time between the sampled steps."""
    times = sample_times(traj, config.step, waypoint_dt)
    if until is not None:
        times = times[times <= until + 1e-9]
    if len(times) < 2:
        return True
    ego = position_along(traj, times, waypoint_dt)
    for agent in scene.agents:
        rel = ego - agent.position(times)
        reach = config.ego_radius + agent.footprint_radius
        for i in range(len(times) - 1):
            dt = times[i + 1] - times[i]
            w = (rel[i + 1] - rel[i]) / dt
            if closest_approach(rel[i], w, dt) < reach:
                return False
    return True


def _comfortable(points: np.ndarray, dt: float, config: MetricConfig) -> bool:
    if len(points) < 3:
        return True
    velocity = np.diff(points, axis=0) / dt
    accel = np.diff(velocity, axis=0) / dt
    if np.any(np.linalg.norm(accel, axis=1) > config.max_accel + 1e-9):
        return False
    if len(accel) >= 2:
        jerk = np.diff(accel, axis=0) / dt
        if np.any(np.linalg.norm(jerk, axis=1) > config.max_jerk + 1e-9):
            return False
    return True


def _with_origin(traj: Trajectory) -> np.ndarray:
    return np.vstack([np.zeros((1, 2)), traj.waypoints])


# ---------------------------------------------------------------------------
# Sub-metrics
# ---------------------------------------------------------------------------

def drivable_area_compliant(scene: SceneRecord, traj: Trajectory, config: MetricConfig,
                            waypoint_dt: float = 0.5) -> bool:
    ego = position_along(traj, sample_times(traj, config.step, waypoint_dt), waypoint_dt)
    return bool(np.all(scene.corridor.contains(ego)))


def ttc_within_bound(scene: SceneRecord, traj: Trajectory, config: MetricConfig,
                     waypoint_dt: float = 0.5) -> bool:
    """Constant-velocity projection of ego and agents stays collision-free for ttc_horizon."""
    times = sample_times(traj, config.step, waypoint_dt)
    ego = position_along(traj, times, waypoint_dt)
    ego_v = velocity_along(traj, times, waypoint_dt)
    moving = np.linalg.norm(ego_v, axis=1) >= config.stopped_speed
    for agent in scene.agents:
        rel = ego - agent.position(times)
        rel_v = ego_v - agent.velocity(times)
        reach = config.ego_radius + agent.footprint_radius
        for i in np.flatnonzero(moving):
            if closest_approach(rel[i], rel_v[i], config.ttc_horizon) < reach:
                return False
    return True


def ego_progress(scene: SceneRecord, traj: Trajectory, config: MetricConfig) -> float:
    s0 = scene.corridor.arc_length(np.zeros((1, 2)))[0]
    gt_progress = scene.corridor.arc_length(scene.gt_trajectory.endpoint[None])[0] - s0
    if gt_progress < config.min_progress:
        return 1.0
    progress = scene.corridor.arc_length(traj.endpoint[None])[0] - s0
    return float(np.clip(progress / gt_progress, 0.0, 1.0))


def sub_scores(scene: SceneRecord, traj: Trajectory, config: Optional[MetricConfig] = None,
               waypoint_dt: float = 0.5) -> SubScores:
    config = config or MetricConfig()
    return SubScores(
        nc=float(collision_free(scene, traj, config, waypoint_dt=waypoint_dt)),
        dac=float(drivable_area_compliant(scene, traj, config, waypoint_dt)),
        ttc=float(ttc_within_bound(scene, traj, config, waypoint_dt)),
        cf=float(_comfortable(_with_origin(traj), waypoint_dt, config)),
        ep=ego_progress(scene, traj, config),
    )


def direction_compliant(scene: SceneRecord, traj: Trajectory, config: MetricConfig,
                        waypoint_dt: float = 0.5) -> bool:
    """Never moves back along the corridor by more than the tolerance."""
    ego = position_along(traj, sample_times(traj, config.step, waypoint_dt), waypoint_dt)
    s = scene.corridor.arc_length(ego)
    backward = np.maximum.accumulate(s) - s
    return bool(backward.max() <= config.ddc_tolerance)


def stop_line_compliant(scene: SceneRecord, traj: Trajectory, config: MetricConfig,
                        waypoint_dt: float = 0.5) -> bool:
    if not scene.corridor.has_stop_line:
        return True
    ego = position_along(traj, sample_times(traj, config.step, waypoint_dt), waypoint_dt)
    return bool(np.all(scene.corridor.arc_length(ego) <= scene.corridor.stop_line_s))


def lane_keeping(scene: SceneRecord, traj: Trajectory, config: MetricConfig, waypoint_dt: float = 0.5) -> bool:
    ego = position_along(traj, sample_times(traj, config.step, waypoint_dt), waypoint_dt)
    deviation = np.abs(scene.corridor.lateral(ego))
    return bool(deviation.max() <= scene.corridor.half_width * config.lk_fraction)


def history_comfort(scene: SceneRecord, traj: Trajectory, config: MetricConfig, waypoint_dt: float = 0.5) -> bool:
    points = np.vstack([scene.history[:, :2], _with_origin(traj)])
    return _comfortable(points, waypoint_dt, config)


def execution_consistency(traj: Trajectory, replan_points: np.ndarray, replan_dt: float,
                          config: MetricConfig, waypoint_dt: float = 0.5) -> bool:
    """
    Replanned waypoints (parent frame, at replan_dt + k*waypoint_dt) stay
    within ec_threshold of the first plan wherever the two overlap.
    """
    replan_points = np.asarray(replan_points, dtype=np.float64).reshape(-1, 2)
    horizon = len(traj) * waypoint_dt
    times = replan_dt + waypoint_dt * np.arange(1, len(replan_points) + 1)
    overlap = times <= horizon + 1e-9
    if not np.any(overlap):
        return True
    previous = position_along(traj, times[overlap], waypoint_dt)
    deviation = np.linalg.norm(replan_points[overlap] - previous, axis=1)
    return bool(deviation.max() < config.ec_threshold)


def ext_sub_scores(scene: SceneRecord, traj: Trajectory, config: Optional[MetricConfig] = None,
                   replan_points: Optional[np.ndarray] = None, waypoint_dt: float = 0.5) -> ExtSubScores:
    """
    Extended sub-scores. Without a replanned trajectory, ec defaults to 1
    and the result is flagged.
    """
    config = config or MetricConfig()
    base = sub_scores(scene, traj, config, waypoint_dt)
    if replan_points is None:
        ec, defaulted = 1.0, True
    else:
        ec = float(execution_consistency(traj, replan_points, config.replan_dt, config, waypoint_dt))
        defaulted = False
    return ExtSubScores.extend(
        base,
        ddc=float(direction_compliant(scene, traj, config, waypoint_dt)),
        tlc=float(stop_line_compliant(scene, traj, config, waypoint_dt)),
        lk=float(lane_keeping(scene, traj, config, waypoint_dt)),
        hc=float(history_comfort(scene, traj, config, waypoint_dt)),
        ec=ec,
        ec_defaulted=defaulted,
    )
