"""
Procedural micro-world scenes.

Every scene is expressed in the ego frame at decision time t=0: the ego sits
at the origin heading +y, x points to the right. A scene carries a single
drivable corridor (centerline polyline plus half width, optional stop line),
piecewise constant-velocity agents, the ego history and a ground-truth
trajectory that stays inside the corridor.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from lastlab.config.run_config import WorldConfig
from lastlab.tokenizer.codec import Trajectory
from lastlab.utils.reliability import RangeError
from lastlab.world import geometry

logger = logging.getLogger(__name__)

DIFFICULTIES = ("easy", "hard")
INSTRUCTIONS = ("straight", "left", "right", "stop")

HEADING_UP = np.pi / 2
STRAIGHT_TOLERANCE = np.deg2rad(15.0)

# Corridor polyline extent (arc length, meters) and sampling step
_S_MIN, _S_MAX, _S_STEP = -20.0, 140.0, 0.5
# Agent knots cover history, the planning horizon and the oracle horizons
_KNOT_T0, _KNOT_T1 = -3.0, 7.0
_AGENT_RADIUS = (0.6, 1.0)
_MAX_DECEL = 2.0


@dataclass(eq=False)
class DrivableCorridor:
    centerline: np.ndarray  # (M, 2)
    half_width: float
    stop_line_s: Optional[float] = None  # arc length of an active stop line

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=np.float64)
        if self.centerline.ndim != 2 or len(self.centerline) < 2:
            raise ValueError("centerline needs at least 2 points")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def direction(self) -> np.ndarray:
        """Unit tangent per segment."""
        d = np.diff(self.centerline, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @property
    def has_stop_line(self) -> bool:
        return self.stop_line_s is not None

    def contains(self, points: np.ndarray) -> np.ndarray:
        return geometry.point_in_corridor(points, self.centerline, self.half_width)

    def arc_length(self, points: np.ndarray) -> np.ndarray:
        return geometry.arc_length_of(points, self.centerline)

    def lateral(self, points: np.ndarray) -> np.ndarray:
        return geometry.signed_lateral(points, self.centerline)

    def stop_line_segment(self) -> Optional[np.ndarray]:
        """Endpoints (2, 2) of the stop line across the corridor."""
        if self.stop_line_s is None:
            return None
        center = geometry.point_at_arc_length(self.centerline, self.stop_line_s)[0]
        tangent = geometry.tangent_at_arc_length(self.centerline, self.stop_line_s)[0]
        normal = np.array([-tangent[1], tangent[0]])
        return np.stack([center - normal * self.half_width, center + normal * self.half_width])


@dataclass(eq=False)
class AgentTrack:
    """Disk agent moving along piecewise-linear knots; linear extrapolation outside them."""

    footprint_radius: float
    knot_times: np.ndarray  # (K,)
    knot_xy: np.ndarray  # (K, 2)

    def __post_init__(self):
        self.knot_times = np.atleast_1d(np.asarray(self.knot_times, dtype=np.float64))
        self.knot_xy = np.asarray(self.knot_xy, dtype=np.float64).reshape(-1, 2)
        if self.footprint_radius <= 0:
            raise ValueError("agent radius must be positive")
        if len(self.knot_times) != len(self.knot_xy) or len(self.knot_times) == 0:
            raise ValueError("agent knots need matching times and positions")

    def _segment(self, t: np.ndarray) -> np.ndarray:
        if len(self.knot_times) == 1:
            return np.zeros_like(t, dtype=int)
        idx = np.searchsorted(self.knot_times, t, side="right") - 1
        return np.clip(idx, 0, len(self.knot_times) - 2)

    def velocity(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if len(self.knot_times) == 1:
            out = np.zeros((len(t_arr), 2))
        else:
            idx = self._segment(t_arr)
            dt = (self.knot_times[idx + 1] - self.knot_times[idx])[:, None]
            out = (self.knot_xy[idx + 1] - self.knot_xy[idx]) / dt
        return out if np.ndim(t) else out[0]

    def position(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if len(self.knot_times) == 1:
            out = np.repeat(self.knot_xy, len(t_arr), axis=0)
        else:
            idx = self._segment(t_arr)
            dt = (t_arr - self.knot_times[idx])[:, None]
            out = self.knot_xy[idx] + self.velocity(t_arr) * dt
        return out if np.ndim(t) else out[0]

    def transformed(self, offset: np.ndarray, rot: np.ndarray, time_shift: float) -> "AgentTrack":
        xy = (self.knot_xy - offset) @ rot.T
        return AgentTrack(self.footprint_radius, self.knot_times - time_shift, xy)


@dataclass(eq=False)
class EgoState:
    velocity: float
    acceleration: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    heading: float = HEADING_UP

    def __post_init__(self):
        if self.velocity < 0:
            raise ValueError("ego velocity must be >= 0")


@dataclass(eq=False)
class SceneRecord:
    scene_id: int
    difficulty: str
    corridor: DrivableCorridor
    agents: List[AgentTrack]
    ego_state: EgoState
    history: np.ndarray  # (T_h, 3) x, y, heading; oldest first
    instruction: str
    gt_trajectory: Trajectory
    seed: int
    duration: float = 6.0

    def check_time(self, t: float, span: float = 0.0) -> None:
        if t < -1e-9 or t + span > self.duration + 1e-9:
            raise RangeError(
                f"time {t:.2f}s (+{span:.1f}s) outside scene duration {self.duration:.1f}s"
            )

    def to_dict(self) -> dict:
        """JSON-ready geometry (rasters and teacher features are stored by the dataset writer)."""
        return {
            "scene_id": self.scene_id,
            "difficulty": self.difficulty,
            "seed": self.seed,
            "duration": self.duration,
            "instruction": self.instruction,
            "corridor": {
                "centerline": self.corridor.centerline.tolist(),
                "half_width": self.corridor.half_width,
                "stop_line_s": self.corridor.stop_line_s,
            },
            "agents": [
                {
                    "radius": a.footprint_radius,
                    "knot_times": a.knot_times.tolist(),
                    "knot_xy": a.knot_xy.tolist(),
                }
                for a in self.agents
            ],
            "ego": {
                "velocity": self.ego_state.velocity,
                "acceleration": self.ego_state.acceleration,
                "position": self.ego_state.position.tolist(),
                "heading": self.ego_state.heading,
            },
            "history": self.history.tolist(),
            "gt_trajectory": self.gt_trajectory.waypoints.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneRecord":
        corridor = data["corridor"]
        ego = data["ego"]
        return cls(
            scene_id=int(data["scene_id"]),
            difficulty=data["difficulty"],
            corridor=DrivableCorridor(
                np.array(corridor["centerline"]), float(corridor["half_width"]), corridor["stop_line_s"]
            ),
            agents=[
                AgentTrack(float(a["radius"]), np.array(a["knot_times"]), np.array(a["knot_xy"]))
                for a in data["agents"]
            ],
            ego_state=EgoState(
                float(ego["velocity"]), float(ego["acceleration"]), np.array(ego["position"]), float(ego["heading"])
            ),
            history=np.array(data["history"], dtype=np.float64).reshape(-1, 3),
            instruction=data["instruction"],
            gt_trajectory=Trajectory(np.array(data["gt_trajectory"])),
            seed=int(data["seed"]),
            duration=float(data["duration"]),
        )


@dataclass(frozen=True)
class EgoPose:
    position: np.ndarray
    heading: float
    velocity: np.ndarray


# ---------------------------------------------------------------------------
# Ego motion along a plan
# ---------------------------------------------------------------------------

def plan_knots(traj: Trajectory, dt: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Times and positions of [origin] + waypoints."""
    points = np.vstack([np.zeros((1, 2)), traj.waypoints])
    times = dt * np.arange(len(points))
    return times, points


def position_along(traj: Trajectory, t, dt: float = 0.5) -> np.ndarray:
    """Ego position at time(s) t along a plan; constant last-segment velocity beyond it."""
    times, points = plan_knots(traj, dt)
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    idx = np.clip(np.searchsorted(times, t_arr, side="right") - 1, 0, len(times) - 2)
    vel = (points[idx + 1] - points[idx]) / dt
    out = points[idx] + vel * (t_arr - times[idx])[:, None]
    return out if np.ndim(t) else out[0]


def velocity_along(traj: Trajectory, t, dt: float = 0.5) -> np.ndarray:
    times, points = plan_knots(traj, dt)
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    idx = np.clip(np.searchsorted(times, t_arr, side="right") - 1, 0, len(times) - 2)
    out = (points[idx + 1] - points[idx]) / dt
    return out if np.ndim(t) else out[0]


def ego_pose(scene: SceneRecord, t: float, dt: float = 0.5) -> EgoPose:
    """Ego pose at time t following the ground-truth trajectory."""
    position = position_along(scene.gt_trajectory, t, dt)
    velocity = velocity_along(scene.gt_trajectory, t, dt)
    speed = float(np.linalg.norm(velocity))
    if speed > 1e-6:
        heading = float(np.arctan2(velocity[1], velocity[0]))
    else:
        s = scene.corridor.arc_length(position)[0]
        tangent = geometry.tangent_at_arc_length(scene.corridor.centerline, s)[0]
        heading = float(np.arctan2(tangent[1], tangent[0]))
    return EgoPose(position=position, heading=heading, velocity=velocity)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _centerline(rng: np.random.Generator, kind: str, v0: float, offset0: float) -> np.ndarray:
    s = np.arange(_S_MIN, _S_MAX + _S_STEP / 2, _S_STEP)
    heading = np.full_like(s, HEADING_UP)

    if kind in ("left", "right"):
        radius = rng.uniform(max(20.0, v0 * v0 / 2.5), 60.0)
        curvature = (1.0 if kind == "left" else -1.0) / radius
        s0 = rng.uniform(2.0, 8.0)
        turn_len = 0.5 * np.pi * radius
        heading = HEADING_UP + curvature * np.clip(s - s0, 0.0, turn_len)
    else:
        rng.uniform(0.0, 1.0)  # keep the draw count independent of kind

    mid = 0.5 * (heading[:-1] + heading[1:])
    steps = _S_STEP * np.stack([np.cos(mid), np.sin(mid)], axis=1)
    points = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    zero = int(round(-_S_MIN / _S_STEP))
    # centerline passes at lateral offset -offset0 from the ego
    return points - points[zero] + np.array([offset0, 0.0])


def _gt_path(centerline: np.ndarray, s, offset0: float) -> np.ndarray:
    s = np.atleast_1d(s)
    base = geometry.point_at_arc_length(centerline, s - _S_MIN)
    tangent = geometry.tangent_at_arc_length(centerline, s - _S_MIN)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    lateral = offset0 * np.exp(-np.maximum(s, 0.0) / 6.0)
    return base + normal * lateral[:, None]


def _progress(t, v0: float, accel: float) -> np.ndarray:
    """Arc length travelled at time t under constant acceleration, never reversing."""
    t = np.asarray(t, dtype=np.float64)
    if accel < 0:
        t_stop = v0 / -accel
        tc = np.minimum(t, t_stop)
        return v0 * tc + 0.5 * accel * tc * tc
    return v0 * t + 0.5 * accel * t * t


def _clearance_by_pass_time(point: np.ndarray, velocity: np.ndarray, gt: Trajectory, taus: np.ndarray,
                            t_end: float = 4.0, step: float = 0.02) -> np.ndarray:
    """Min distance to the GT over [0, t_end] for a straight agent passing `point` at each tau."""
    ts = np.arange(0.0, t_end + step / 2, step)
    ego = position_along(gt, ts)  # (T, 2)
    agent = point + velocity * (ts[None, :] - taus[:, None])[..., None]  # (K, T, 2)
    return np.min(np.linalg.norm(agent - ego[None], axis=2), axis=1)


def _corridor_agent(rng, centerline, s_start: float, speed: float, radius: float) -> AgentTrack:
    times = np.arange(_KNOT_T0, _KNOT_T1 + 0.25, 0.5)
    s = s_start + speed * times - _S_MIN
    return AgentTrack(radius, times, geometry.point_at_arc_length(centerline, s))


def _parked_agent(rng, centerline, half_width: float) -> AgentTrack:
    radius = rng.uniform(*_AGENT_RADIUS)
    s = rng.uniform(5.0, 40.0)
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    gap = half_width + radius + rng.uniform(0.3, 2.0)
    base = geometry.point_at_arc_length(centerline, s - _S_MIN)[0]
    tangent = geometry.tangent_at_arc_length(centerline, s - _S_MIN)[0]
    normal = np.array([-tangent[1], tangent[0]])
    return AgentTrack(radius, np.array([0.0]), (base + side * gap * normal)[None, :])


def _crossing_agent(rng, centerline, gt: Trajectory, ego_radius: float) -> AgentTrack:
    """
    Agent whose straight path cuts across the ground-truth path within 4 s.

    The pass time is picked so the agent misses the ego following the ground
    truth, but by less than 2 * radius + ego_radius.
    """
    radius = rng.uniform(*_AGENT_RADIUS)
    t_cross = rng.uniform(1.0, 3.0)
    point = position_along(gt, t_cross)
    heading = velocity_along(gt, t_cross)
    if np.linalg.norm(heading) < 1e-3:
        s = geometry.arc_length_of(point[None, :], centerline)[0]
        heading = geometry.tangent_at_arc_length(centerline, s)[0]
    heading = heading / np.linalg.norm(heading)
    skew = rng.uniform(-0.35, 0.35)
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    across = side * np.array([-heading[1], heading[0]])
    c, s = np.cos(skew), np.sin(skew)
    direction = np.array([c * across[0] - s * across[1], s * across[0] + c * across[1]])
    velocity = rng.uniform(3.0, 7.0) * direction

    taus = np.arange(0.2, 3.8 + 1e-9, 0.02)
    clearance = _clearance_by_pass_time(point, velocity, gt, taus)
    near_miss = np.flatnonzero((clearance > radius + ego_radius + 0.25) & (clearance < 2 * radius + ego_radius - 0.05))
    if len(near_miss):
        tau = taus[int(rng.choice(near_miss))]
    else:
        # slow ego: every pass is a hit or too far; take the closest pass that still clears
        clears = clearance > radius + ego_radius
        tau = taus[int(np.argmin(np.where(clears, clearance, np.inf)))] if clears.any() else t_cross
        logger.debug(f"no near-miss pass time; crossing at tau={tau:.2f}")

    times = np.array([_KNOT_T0, _KNOT_T1])
    return AgentTrack(radius, times, point[None, :] + velocity[None, :] * (times - tau)[:, None])


def _instruction(kind: str, heading_change: float) -> str:
    if abs(heading_change) < STRAIGHT_TOLERANCE:
        return "stop" if kind == "stop" else "straight"
    return "left" if heading_change > 0 else "right"


def generate_scene(seed: int, difficulty: str = "easy", config: Optional[WorldConfig] = None) -> SceneRecord:
    """
    Deterministic scene for (seed, difficulty).

    Hard scenes add an agent that crosses the ground-truth path ahead of
    the ego within 4 s.
    """
    if seed < 0:
        raise ValueError("seed must be >= 0")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}")
    config = config or WorldConfig()
    code = DIFFICULTIES.index(difficulty)
    rng = np.random.default_rng([seed, code])

    kind = str(rng.choice(INSTRUCTIONS, p=[0.3, 0.25, 0.25, 0.2]))
    v0 = rng.uniform(3.0, 9.0)
    half_width = rng.uniform(2.5, 4.0)
    offset0 = rng.uniform(-0.6, 0.6)
    centerline = _centerline(rng, kind, v0, offset0)

    stop_line_s = None
    if kind == "stop":
        stop_dist = rng.uniform(max(v0 * v0 / (2 * _MAX_DECEL), 4.0), max(v0 * v0 / 2.0, 6.0))
        accel = -v0 * v0 / (2.0 * stop_dist)
        stop_line_s = stop_dist + 1.0 - _S_MIN
        hist_accel = 0.0
    else:
        accel = rng.uniform(-0.8, 0.5)
        hist_accel = accel

    t_future = config.waypoint_dt * np.arange(1, config.future_len + 1)
    s_future = _progress(t_future, v0, accel)
    gt = Trajectory(_gt_path(centerline, s_future, offset0))

    t_hist = -config.waypoint_dt * np.arange(config.history_len, 0, -1)
    s_hist = v0 * t_hist + 0.5 * hist_accel * t_hist * t_hist
    hist_xy = _gt_path(centerline, s_hist, offset0)
    hist_tan = geometry.tangent_at_arc_length(centerline, s_hist - _S_MIN)
    history = np.column_stack([hist_xy, np.arctan2(hist_tan[:, 1], hist_tan[:, 0])])

    s_end = float(s_future[-1])
    end_tan = geometry.tangent_at_arc_length(centerline, s_end - _S_MIN)[0]
    heading_change = float(np.arctan2(end_tan[1], end_tan[0]) - HEADING_UP)
    instruction = _instruction(kind, heading_change)

    agents: List[AgentTrack] = []
    v_max = max(v0, v0 + accel * t_future[-1])
    if rng.uniform() < 0.6:
        radius = rng.uniform(*_AGENT_RADIUS)
        agents.append(_corridor_agent(rng, centerline, rng.uniform(12.0, 30.0), v_max + rng.uniform(0.5, 3.0), radius))
    for _ in range(int(rng.integers(0, 3))):
        agents.append(_parked_agent(rng, centerline, half_width))
    if difficulty == "hard":
        agents.append(_crossing_agent(rng, centerline, gt, config.ego_radius))

    scene = SceneRecord(
        scene_id=seed * 2 + code,
        difficulty=difficulty,
        corridor=DrivableCorridor(centerline, half_width, stop_line_s),
        agents=agents,
        ego_state=EgoState(velocity=float(v0), acceleration=float(accel)),
        history=history,
        instruction=instruction,
        gt_trajectory=gt,
        seed=seed,
        duration=config.duration,
    )
    logger.debug(f"Generated scene {scene.scene_id} ({difficulty}, {instruction}, {len(agents)} agents)")
    return scene


# ---------------------------------------------------------------------------
# Replanning frame
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AdvancedScene:
    """A scene re-expressed in the ego frame reached after executing part of a plan."""

    scene: SceneRecord
    origin: np.ndarray  # new ego position in the parent frame
    heading: float  # new ego heading in the parent frame
    dt: float

    def to_parent(self, points: np.ndarray) -> np.ndarray:
        rot = geometry.rotation(self.heading)
        return np.asarray(points) @ rot + self.origin


def advance_scene(scene: SceneRecord, traj: Trajectory, dt: float, waypoint_dt: float = 0.5) -> AdvancedScene:
    """
    Move the ego `dt` seconds along `traj` and re-express the scene there.

    The ground truth of the new scene is the original ground truth shifted
    by `dt` (extrapolated at its last velocity past the end).
    """
    scene.check_time(dt)
    origin = position_along(traj, dt, waypoint_dt)
    velocity = velocity_along(traj, dt, waypoint_dt)
    speed = float(np.linalg.norm(velocity))
    if speed > 1e-6:
        heading = float(np.arctan2(velocity[1], velocity[0]))
    else:
        s = scene.corridor.arc_length(origin)[0]
        tangent = geometry.tangent_at_arc_length(scene.corridor.centerline, s)[0]
        heading = float(np.arctan2(tangent[1], tangent[0]))
    rot = geometry.rotation(heading)

    def local(points):
        return (np.atleast_2d(points) - origin) @ rot.T

    n_hist = len(scene.history)
    hist_times = dt - waypoint_dt * np.arange(n_hist, 0, -1)
    past_times = np.concatenate([waypoint_dt * np.arange(-n_hist, 0), [0.0]])
    past_xy = np.vstack([scene.history[:, :2], np.zeros((1, 2))])
    hist_xy = np.empty((n_hist, 2))
    for i, t in enumerate(hist_times):
        if t <= 0.0:
            hist_xy[i] = [np.interp(t, past_times, past_xy[:, 0]), np.interp(t, past_times, past_xy[:, 1])]
        else:
            hist_xy[i] = position_along(traj, t, waypoint_dt)
    hist_local = local(hist_xy)
    hist_heading = np.full(n_hist, np.pi / 2)
    steps = np.diff(np.vstack([hist_local, np.zeros((1, 2))]), axis=0)
    moving = np.linalg.norm(steps, axis=1) > 1e-6
    hist_heading[moving] = np.arctan2(steps[moving, 1], steps[moving, 0])

    future_t = dt + waypoint_dt * np.arange(1, len(scene.gt_trajectory) + 1)
    gt_local = local(position_along(scene.gt_trajectory, future_t, waypoint_dt))

    prev_velocity = velocity_along(traj, max(dt - waypoint_dt, 0.0), waypoint_dt)
    accel = (speed - float(np.linalg.norm(prev_velocity))) / waypoint_dt if dt > 0 else scene.ego_state.acceleration

    advanced = SceneRecord(
        scene_id=scene.scene_id,
        difficulty=scene.difficulty,
        corridor=DrivableCorridor(local(scene.corridor.centerline), scene.corridor.half_width, scene.corridor.stop_line_s),
        agents=[a.transformed(origin, rot, dt) for a in scene.agents],
        ego_state=EgoState(velocity=speed, acceleration=float(accel)),
        history=np.column_stack([hist_local, hist_heading]),
        instruction=scene.instruction,
        gt_trajectory=Trajectory(gt_local),
        seed=scene.seed,
        duration=scene.duration - dt,
    )
    return AdvancedScene(scene=advanced, origin=origin, heading=heading, dt=dt)
