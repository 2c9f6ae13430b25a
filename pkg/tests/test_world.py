import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import static_scene, tiny_config
from lastlab.config.run_config import LatentConfig, WorldConfig
from lastlab.tokenizer.codec import serialize_trajectory
from lastlab.utils.reliability import RangeError
from lastlab.world import geometry
from lastlab.world.oracles import dynamics_oracle, geometry_oracle, ray_directions, teacher_features
from lastlab.world.raster import EGO_VALUE, rasterize
from lastlab.world.samples import generate_samples
from lastlab.world.scene import (
    AgentTrack,
    SceneRecord,
    advance_scene,
    ego_pose,
    generate_scene,
    position_along,
)

seeds = st.integers(min_value=0, max_value=10_000)
difficulties = st.sampled_from(["easy", "hard"])


class TestGenerateScene:
    @given(seeds, difficulties)
    def test_deterministic(self, seed, difficulty):
        a = generate_scene(seed, difficulty)
        b = generate_scene(seed, difficulty)
        assert a.to_dict() == b.to_dict()

    @given(seeds, difficulties)
    def test_ground_truth_is_encodable_and_inside_corridor(self, seed, difficulty):
        scene = generate_scene(seed, difficulty)
        assert len(scene.gt_trajectory) == 6
        serialize_trajectory(scene.gt_trajectory)
        assert scene.corridor.contains(scene.gt_trajectory.waypoints).all()

    def test_hard_scenes_have_a_near_crossing_agent(self):
        ego_radius = WorldConfig().ego_radius
        ts = np.arange(0.0, 4.0 + 1e-9, 0.005)
        for seed in range(200):
            scene = generate_scene(seed, "hard")
            ego = position_along(scene.gt_trajectory, ts)
            close = [
                np.min(np.linalg.norm(a.position(ts) - ego, axis=1)) < 2 * a.footprint_radius + ego_radius
                for a in scene.agents
            ]
            assert any(close), seed
            assert scene.scene_id != generate_scene(seed, "easy").scene_id

    def test_crossing_agent_misses_the_ground_truth(self):
        # the crossing agent is always the last one added
        ego_radius = WorldConfig().ego_radius
        ts = np.arange(0.0, 4.0 + 1e-9, 0.005)
        missed = 0
        for seed in range(100):
            scene = generate_scene(seed, "hard")
            agent = scene.agents[-1]
            gap = np.min(np.linalg.norm(agent.position(ts) - position_along(scene.gt_trajectory, ts), axis=1))
            missed += gap > agent.footprint_radius + ego_radius
        assert missed >= 90

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            generate_scene(-1)
        with pytest.raises(ValueError):
            generate_scene(0, "medium")

    def test_stop_scenes_carry_a_stop_line(self):
        stops = [s for s in (generate_scene(i) for i in range(60)) if s.corridor.has_stop_line]
        assert stops
        for scene in stops:
            assert scene.instruction == "stop"
            assert scene.corridor.stop_line_segment().shape == (2, 2)

    def test_dict_round_trip(self):
        scene = generate_scene(11, "hard")
        assert SceneRecord.from_dict(scene.to_dict()).to_dict() == scene.to_dict()


class TestEgoPose:
    def test_pose_follows_ground_truth(self):
        scene = static_scene()
        pose = ego_pose(scene, 1.0)
        np.testing.assert_allclose(pose.position, [0.0, 5.0])
        assert pose.heading == pytest.approx(np.pi / 2)

    def test_extrapolates_past_the_horizon(self):
        np.testing.assert_allclose(position_along(static_scene().gt_trajectory, 4.0), [0.0, 20.0])

    def test_time_outside_duration(self):
        with pytest.raises(RangeError):
            rasterize(static_scene(), 6.5)
        with pytest.raises(RangeError):
            dynamics_oracle(static_scene(), 3.5)


class TestRaster:
    @given(seeds, difficulties)
    def test_shape_and_range(self, seed, difficulty):
        raster = rasterize(generate_scene(seed, difficulty))
        assert raster.shape == (3, 64, 64)
        assert raster.dtype == np.float32
        assert raster.min() >= 0.0 and raster.max() <= 1.0

    def test_ego_cell(self):
        config = WorldConfig()
        raster = rasterize(static_scene(), 0.0, config)
        assert raster[2, config.ego_row, config.ego_col] == EGO_VALUE
        assert raster[0, config.ego_row, config.ego_col] == 1.0

    def test_agent_ahead_is_drawn_above_the_ego(self):
        config = WorldConfig()
        agent = AgentTrack(1.0, np.array([0.0]), np.array([[0.0, 10.0]]))
        raster = rasterize(static_scene([agent]), 0.0, config)
        rows = int(round(10.0 / config.resolution))
        assert raster[1, config.ego_row - rows, config.ego_col] == 1.0
        assert raster[1, config.ego_row, config.ego_col] == 0.0

    def test_corridor_edges(self):
        config = WorldConfig()
        raster = rasterize(static_scene(half_width=3.0), 0.0, config)
        cols_inside = int(2.5 / config.resolution)
        assert raster[0, config.ego_row, config.ego_col + cols_inside] == 1.0
        assert raster[0, config.ego_row, config.ego_col + cols_inside + 2] == 0.0

    @pytest.mark.parametrize("seed, difficulty, t", [(0, "easy", 0.0), (1, "hard", 0.0), (2, "hard", 1.5), (3, "easy", 2.5)])
    def test_corridor_channel_matches_every_cell(self, seed, difficulty, t):
        config = WorldConfig()
        scene = generate_scene(seed, difficulty, config)
        raster = rasterize(scene, t, config)
        pose = ego_pose(scene, t, config.waypoint_dt)
        forward = np.array([np.cos(pose.heading), np.sin(pose.heading)])
        right = np.array([forward[1], -forward[0]])

        rows, cols = np.meshgrid(np.arange(config.grid_size), np.arange(config.grid_size), indexing="ij")
        x = (cols - config.ego_col) * config.resolution
        y = (config.ego_row - rows) * config.resolution
        cells = pose.position + x[..., None] * right + y[..., None] * forward

        distance = np.full(rows.shape, np.inf)
        line = scene.corridor.centerline
        for a, b in zip(line[:-1], line[1:]):
            ab = b - a
            u = np.clip(((cells - a) @ ab) / (ab @ ab), 0.0, 1.0)
            distance = np.minimum(distance, np.linalg.norm(cells - a - u[..., None] * ab, axis=-1))

        inside = distance <= scene.corridor.half_width
        decided = np.abs(distance - scene.corridor.half_width) > 1e-9
        assert inside.any() and (~inside).any()
        np.testing.assert_array_equal(raster[0][decided], inside[decided].astype(np.float32))


def ray_march(scene: SceneRecord, directions: np.ndarray, r_max: float, step: float = 0.01) -> np.ndarray:
    """Distance at which each ray first leaves the corridor or enters an agent, sampled every `step` metres."""
    radii = np.arange(0.0, r_max + step, step)
    depth = np.full(len(directions), r_max)
    centers = [(a.position(0.0), a.footprint_radius) for a in scene.agents]
    for i, d in enumerate(directions):
        pts = radii[:, None] * d[None, :]
        blocked = ~scene.corridor.contains(pts)
        for center, radius in centers:
            blocked |= np.linalg.norm(pts - center, axis=1) <= radius
        hits = np.flatnonzero(blocked)
        if hits.size:
            depth[i] = radii[hits[0]]
    return depth


def oracle_overshoot(seeds_, step: float = 0.01):
    """Marched minus analytic depth for every ray; the march can only land past the boundary."""
    world, latent = WorldConfig(feature_dim=8), LatentConfig(n_3d=4, n_wm=2)
    rays = world.feature_dim - 1
    errors = []
    for seed in seeds_:
        scene = generate_scene(int(seed), "hard" if seed % 2 else "easy", world)
        features = geometry_oracle(scene, 0.0, latent, world)
        dirs = ray_directions(ego_pose(scene, 0.0).heading, latent.n_3d, rays)
        marched = ray_march(scene, dirs, world.r_max, step)
        predicted = features[:, :rays].reshape(-1) * world.r_max
        errors.append(marched - predicted)
    return np.concatenate(errors)


class TestOracles:
    def test_shapes_and_range(self):
        config = tiny_config()
        feats = teacher_features(generate_scene(3, "hard", config.world), 0.0, config.latent, config.world)
        assert feats.f_geo.shape == (config.latent.n_3d, config.world.feature_dim)
        assert feats.f_dyn.shape == (3, config.latent.n_wm, config.world.feature_dim)
        assert np.abs(feats.f_geo).max() <= 1.0 and np.abs(feats.f_dyn).max() <= 1.0

    def test_deterministic(self):
        scene = generate_scene(5, "hard")
        np.testing.assert_array_equal(geometry_oracle(scene), geometry_oracle(scene))
        np.testing.assert_array_equal(dynamics_oracle(scene), dynamics_oracle(scene))

    def test_geometry_matches_ray_march(self):
        overshoot = oracle_overshoot(range(10))
        # float32 features carry ~1e-6 m of rounding at r_max
        assert overshoot.min() >= -1e-5
        assert overshoot.max() < 0.01 + 1e-5

    @pytest.mark.slow
    def test_geometry_matches_ray_march_100_scenes(self):
        overshoot = oracle_overshoot(range(100), step=0.005)
        assert overshoot.min() >= -1e-5
        assert overshoot.max() < 0.005 + 1e-5

    def test_static_world_horizons_coincide(self):
        agent = AgentTrack(1.0, np.array([0.0]), np.array([[4.0, 8.0]]))
        scene = static_scene([agent], velocity=0.0)
        dyn = dynamics_oracle(scene)
        np.testing.assert_array_equal(dyn[0], dyn[1])
        np.testing.assert_array_equal(dyn[1], dyn[2])

    @pytest.mark.parametrize("velocity", [(1.5, 0.0), (0.0, -2.0), (-1.0, 1.0)])
    def test_displacement_grows_by_one_second_of_motion_per_horizon(self, velocity):
        world = WorldConfig(feature_dim=8)
        velocity = np.array(velocity)
        start = np.array([2.0, 6.0])
        agent = AgentTrack(0.8, np.array([0.0, 4.0]), np.stack([start, start + 4.0 * velocity]))
        scene = static_scene([agent], velocity=0.0)
        dyn = dynamics_oracle(scene, 0.0, LatentConfig(n_wm=4), world)

        pose = ego_pose(scene, 0.0, world.waypoint_dt)
        step = geometry.rotation(pose.heading) @ velocity / world.r_max
        displacement = []
        for h in range(3):
            occupied = np.flatnonzero(dyn[h, :, 0] > 0)
            assert len(occupied) == 1
            displacement.append(dyn[h, occupied[0], 3:5])
        np.testing.assert_allclose(displacement[0], step, atol=1e-6)
        np.testing.assert_allclose(displacement[1] - displacement[0], step, atol=1e-6)
        np.testing.assert_allclose(displacement[2] - displacement[1], step, atol=1e-6)

    def test_empty_world_has_no_agent_statistics(self):
        dyn = dynamics_oracle(static_scene())
        assert not dyn.any()

    def test_geometry_sees_the_corridor_wall(self):
        world, latent = WorldConfig(feature_dim=2), LatentConfig(n_3d=4)
        scene = static_scene(half_width=3.0)
        features = geometry_oracle(scene, 0.0, latent, world)
        # token 1's single ray points left (+90 degrees from heading), token 3's right
        assert features[1, 0] * world.r_max == pytest.approx(3.0, abs=1e-9)
        assert features[3, 0] * world.r_max == pytest.approx(3.0, abs=1e-9)
        assert features[0, 0] == pytest.approx(1.0)


class TestAdvanceScene:
    def test_straight_advance(self):
        scene = static_scene()
        advanced = advance_scene(scene, scene.gt_trajectory, 0.5)
        np.testing.assert_allclose(advanced.origin, [0.0, 2.5])
        np.testing.assert_allclose(advanced.scene.gt_trajectory.waypoints[0], [0.0, 2.5], atol=1e-9)
        back = advanced.to_parent(advanced.scene.gt_trajectory.waypoints)
        np.testing.assert_allclose(back[:5], scene.gt_trajectory.waypoints[1:], atol=1e-9)

    def test_rotated_frame_round_trip(self):
        scene = generate_scene(21, "easy")
        advanced = advance_scene(scene, scene.gt_trajectory, 0.5)
        local = advanced.scene.gt_trajectory.waypoints
        np.testing.assert_allclose(advanced.to_parent(local)[:5], scene.gt_trajectory.waypoints[1:], atol=1e-6)

    def test_rotation_maps_heading_to_forward(self):
        for heading in (0.0, 0.7, np.pi / 2, -2.0):
            forward = np.array([np.cos(heading), np.sin(heading)])
            np.testing.assert_allclose(geometry.rotation(heading) @ forward, [0.0, 1.0], atol=1e-12)


def test_generate_samples_uses_configured_world():
    config = tiny_config()
    samples = generate_samples([1, 2], "easy", config)
    assert [s.scene.seed for s in samples] == [1, 2]
    assert samples[0].raster.shape == (3, config.world.grid_size, config.world.grid_size)
    assert samples[0].teacher.f_geo.shape == (config.latent.n_3d, config.world.feature_dim)
