"""
Deterministic teacher features.

geometry_oracle: per latent token, a fan of ray-cast depths to the nearest
corridor boundary or agent, plus the ego's lateral offset.

dynamics_oracle: per horizon (t+1 s, t+2 s, t+3 s) and angular sector
around the ego, pooled agent statistics (count, centroid, displacement
since t, velocity relative to the ego) and a radial occupancy histogram.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from lastlab.config.run_config import LatentConfig, WorldConfig
from lastlab.world import geometry
from lastlab.world.scene import SceneRecord, ego_pose

# Dynamics row layout: [count, centroid x/y, displacement x/y, rel. velocity x/y, radial bins...]
DYN_STAT_COLUMNS = 7
COUNT_SCALE = 4.0
VELOCITY_SCALE = 20.0


@dataclass(eq=False)
class TeacherFeatures:
    f_geo: np.ndarray  # (K_3d, d_t)
    f_dyn: np.ndarray  # (groups, K_wm, d_t)

    def __post_init__(self):
        self.f_geo = np.asarray(self.f_geo, dtype=np.float32)
        self.f_dyn = np.asarray(self.f_dyn, dtype=np.float32)


def ray_directions(heading: float, n_tokens: int, rays_per_token: int) -> np.ndarray:
    """Unit directions; ray j of token k sits at angle 2*pi*(k*rays + j)/total counterclockwise from heading."""
    total = n_tokens * rays_per_token
    angles = heading + 2.0 * np.pi * np.arange(total) / total
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def geometry_oracle(
    scene: SceneRecord,
    t: float = 0.0,
    latent: Optional[LatentConfig] = None,
    config: Optional[WorldConfig] = None,
) -> np.ndarray:
    """
    Ray-cast geometry features, shape (K_3d, d_t), values in [-1, 1].

    Raises:
        RangeError: t outside the scene duration.
    """
    latent = latent or LatentConfig()
    config = config or WorldConfig()
    scene.check_time(t)
    rays = config.feature_dim - 1

    pose = ego_pose(scene, t, config.waypoint_dt)
    dirs = ray_directions(pose.heading, latent.n_3d, rays)
    depth = geometry.corridor_exit_distances(
        pose.position, dirs, scene.corridor.centerline, scene.corridor.half_width
    )
    for agent in scene.agents:
        center = agent.position(t)
        hits = np.array([geometry.ray_disk_hit(pose.position, d, center, agent.footprint_radius) for d in dirs])
        depth = np.minimum(depth, hits)

    depth = np.minimum(depth, config.r_max) / config.r_max
    lateral = scene.corridor.lateral(pose.position)[0] / scene.corridor.half_width

    features = np.empty((latent.n_3d, config.feature_dim), dtype=np.float64)
    features[:, :rays] = depth.reshape(latent.n_3d, rays)
    features[:, rays] = lateral
    return np.clip(features, -1.0, 1.0).astype(np.float32)


def sector_of(local_xy: np.ndarray, n_sectors: int) -> np.ndarray:
    """Angular sector index, counterclockwise from the forward axis."""
    angle = np.mod(np.arctan2(-local_xy[:, 0], local_xy[:, 1]), 2.0 * np.pi)
    return np.minimum((angle / (2.0 * np.pi) * n_sectors).astype(int), n_sectors - 1)


def dynamics_oracle(
    scene: SceneRecord,
    t: float = 0.0,
    latent: Optional[LatentConfig] = None,
    config: Optional[WorldConfig] = None,
) -> np.ndarray:
    """
    Sector statistics per horizon, shape (groups, K_wm, d_t), values in [-1, 1].

    All horizons are expressed in the ego frame at time t so that slices of
    a static world coincide.

    Raises:
        RangeError: t + the longest horizon exceeds the scene duration.
    """
    latent = latent or LatentConfig()
    config = config or WorldConfig()
    scene.check_time(t, span=max(config.horizons))
    n_bins = config.feature_dim - DYN_STAT_COLUMNS
    k = latent.n_wm

    pose = ego_pose(scene, t, config.waypoint_dt)
    rot = geometry.rotation(pose.heading)
    features = np.zeros((len(config.horizons), k, config.feature_dim), dtype=np.float64)

    for h, horizon in enumerate(config.horizons):
        tau = t + horizon
        for agent in scene.agents:
            now = (agent.position(tau) - pose.position) @ rot.T
            dist = float(np.linalg.norm(now))
            if dist > config.r_max:
                continue
            before = (agent.position(t) - pose.position) @ rot.T
            rel_v = (agent.velocity(tau) - pose.velocity) @ rot.T
            sector = sector_of(now[None, :], k)[0]
            row = features[h, sector]
            row[0] += 1.0
            row[1:3] += now
            row[3:5] += now - before
            row[5:7] += rel_v
            row[DYN_STAT_COLUMNS + min(int(dist / config.r_max * n_bins), n_bins - 1)] += 1.0

        counts = features[h, :, 0:1]
        occupied = counts[:, 0] > 0
        features[h, occupied, 1:7] /= counts[occupied]
        features[h, :, 1:3] /= config.r_max
        features[h, :, 3:5] /= config.r_max
        features[h, :, 5:7] /= VELOCITY_SCALE
        features[h, :, 0] /= COUNT_SCALE
        features[h, :, DYN_STAT_COLUMNS:] /= COUNT_SCALE

    return np.clip(features, -1.0, 1.0).astype(np.float32)


def teacher_features(
    scene: SceneRecord,
    t: float = 0.0,
    latent: Optional[LatentConfig] = None,
    config: Optional[WorldConfig] = None,
) -> TeacherFeatures:
    return TeacherFeatures(
        f_geo=geometry_oracle(scene, t, latent, config),
        f_dyn=dynamics_oracle(scene, t, latent, config),
    )
