"""Open-loop L2 and collision rate at 1/2/3 s."""

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from lastlab.config.run_config import MetricConfig
from lastlab.metrics.closed_loop import collision_free
from lastlab.tokenizer.codec import Trajectory
from lastlab.utils.reliability import ConfigurationError
from lastlab.world.scene import SceneRecord

HORIZONS = (1.0, 2.0, 3.0)


@dataclass(frozen=True)
class OpenLoopResult:
    l2_1s: float
    l2_2s: float
    l2_3s: float
    l2_avg: float
    collision_1s: float
    collision_2s: float
    collision_3s: float
    collision_avg: float

    def as_dict(self) -> dict:
        return asdict(self)


def waypoint_index(horizon: float, n: int, waypoint_dt: float = 0.5) -> int:
    """Waypoint whose timestamp is closest to `horizon`."""
    times = waypoint_dt * np.arange(1, n + 1)
    return int(np.argmin(np.abs(times - horizon)))


def open_loop(pred: Trajectory, gt: Trajectory, scene: SceneRecord,
              config: Optional[MetricConfig] = None, waypoint_dt: float = 0.5,
              horizons: Sequence[float] = HORIZONS) -> OpenLoopResult:
    """
    Raises:
        ConfigurationError: pred and gt have different lengths.
    """
    config = config or MetricConfig()
    if len(pred) != len(gt):
        raise ConfigurationError(f"prediction has {len(pred)} waypoints, ground truth {len(gt)}")

    l2, collision = [], []
    for h in horizons:
        i = waypoint_index(h, len(gt), waypoint_dt)
        l2.append(float(np.linalg.norm(pred.waypoints[i] - gt.waypoints[i])))
        collision.append(0.0 if collision_free(scene, pred, config, until=h, waypoint_dt=waypoint_dt) else 1.0)

    return OpenLoopResult(
        l2_1s=l2[0], l2_2s=l2[1], l2_3s=l2[2], l2_avg=float(np.mean(l2)),
        collision_1s=collision[0], collision_2s=collision[1], collision_3s=collision[2],
        collision_avg=float(np.mean(collision)),
    )
