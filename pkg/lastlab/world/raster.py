"""
Ego-centric bird's-eye-view raster.

Channel 0 marks corridor cells, channel 1 agent disks at time t and
channel 2 the ego (1.0), the route goal (0.5) and an active stop line (0.25).
The ego cell is fixed at (ego_row, ego_col) with the heading pointing up.
"""

from typing import Optional

import numpy as np

from lastlab.config.run_config import WorldConfig
from lastlab.world import geometry
from lastlab.world.scene import SceneRecord, ego_pose

EGO_VALUE = 1.0
GOAL_VALUE = 0.5
STOP_LINE_VALUE = 0.25
GOAL_RADIUS = 0.75


def cell_offsets(config: WorldConfig) -> np.ndarray:
    """Local (x right, y forward) coordinates of every cell center, shape (H*W, 2)."""
    rows, cols = np.meshgrid(np.arange(config.grid_size), np.arange(config.grid_size), indexing="ij")
    x = (cols - config.ego_col) * config.resolution
    y = (config.ego_row - rows) * config.resolution
    return np.stack([x.ravel(), y.ravel()], axis=1)


def cell_centers(scene: SceneRecord, t: float, config: WorldConfig) -> np.ndarray:
    """Scene-frame coordinates of every cell center at time t."""
    pose = ego_pose(scene, t, config.waypoint_dt)
    rot = geometry.rotation(pose.heading)
    return cell_offsets(config) @ rot + pose.position


def _segment_distance(points: np.ndarray, segment: np.ndarray) -> np.ndarray:
    dist, _, _ = geometry.segment_projection(points, segment)
    return dist


def rasterize(scene: SceneRecord, t: float = 0.0, config: Optional[WorldConfig] = None) -> np.ndarray:
    """
    Render the scene at time t as a (3, H, W) float32 array in [0, 1].

    Raises:
        RangeError: t outside the scene duration.
    """
    config = config or WorldConfig()
    scene.check_time(t)
    size = config.grid_size
    centers = cell_centers(scene, t, config)
    raster = np.zeros((3, size * size), dtype=np.float32)

    raster[0] = scene.corridor.contains(centers)

    for agent in scene.agents:
        pos = agent.position(t)
        inside = np.linalg.norm(centers - pos, axis=1) <= agent.footprint_radius
        raster[1, inside] = 1.0

    pose = ego_pose(scene, t, config.waypoint_dt)
    marks = np.zeros(size * size, dtype=np.float32)

    stop_line = scene.corridor.stop_line_segment()
    if stop_line is not None:
        near = _segment_distance(centers, stop_line) <= 0.5 * config.resolution
        marks[near] = STOP_LINE_VALUE

    s_ego = scene.corridor.arc_length(pose.position)[0]
    goal = geometry.point_at_arc_length(scene.corridor.centerline, s_ego + config.goal_ahead)[0]
    marks[np.linalg.norm(centers - goal, axis=1) <= GOAL_RADIUS] = GOAL_VALUE

    marks[np.linalg.norm(centers - pose.position, axis=1) <= config.ego_radius] = EGO_VALUE
    raster[2] = marks

    return raster.reshape(3, size, size)
