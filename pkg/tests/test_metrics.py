import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import static_scene
from lastlab.config.run_config import MetricConfig
from lastlab.metrics.aggregate import aggregate, mean
from lastlab.metrics.closed_loop import (
    WEIGHTS,
    ExtSubScores,
    SubScores,
    collision_free,
    direction_compliant,
    drivable_area_compliant,
    ego_progress,
    epdms,
    execution_consistency,
    ext_sub_scores,
    history_comfort,
    lane_keeping,
    pdms,
    stop_line_compliant,
    sub_scores,
    ttc_within_bound,
)
from lastlab.metrics.open_loop import open_loop, waypoint_index
from lastlab.tokenizer.codec import Trajectory
from lastlab.utils.reliability import ConfigurationError
from lastlab.world.scene import AgentTrack, generate_scene, position_along

METRICS = MetricConfig()
unit = st.floats(min_value=0.0, max_value=1.0)
gate = st.sampled_from([0.0, 1.0])


def lateral_offset(offset: float, velocity: float = 5.0) -> Trajectory:
    return Trajectory(np.column_stack([np.full(6, offset), velocity * 0.5 * np.arange(1, 7)]))


def parked(x: float, y: float, radius: float = 1.0) -> AgentTrack:
    return AgentTrack(radius, np.array([0.0]), np.array([[x, y]]))


class TestAggregation:
    def test_pdms_hand_case(self):
        s = SubScores(nc=1.0, dac=1.0, ttc=1.0, cf=1.0, ep=0.5)
        assert pdms(s) == pytest.approx(9.5 / 12)

    def test_epdms_hand_case(self):
        s = ExtSubScores(nc=1.0, dac=1.0, ttc=1.0, cf=1.0, ep=1.0, ddc=1.0, tlc=1.0, lk=0.0, hc=1.0, ec=1.0)
        assert epdms(s) == pytest.approx(0.875)

    @pytest.mark.parametrize("field", ["nc", "dac"])
    def test_pdms_gates(self, field):
        values = dict(nc=1.0, dac=1.0, ttc=1.0, cf=1.0, ep=1.0)
        values[field] = 0.0
        assert pdms(SubScores(**values)) == 0.0

    @pytest.mark.parametrize("field", ["nc", "dac", "ddc", "tlc"])
    def test_epdms_gates(self, field):
        values = dict(nc=1.0, dac=1.0, ttc=1.0, cf=1.0, ep=1.0, ddc=1.0, tlc=1.0, lk=1.0, hc=1.0, ec=1.0)
        values[field] = 0.0
        assert epdms(ExtSubScores(**values)) == 0.0

    @given(gate, gate, gate, gate, unit)
    def test_pdms_matches_formula(self, nc, dac, ttc, cf, ep):
        expected = nc * dac * (5 * ep + 5 * ttc + 2 * cf) / 12
        assert pdms(SubScores(nc, dac, ttc, cf, ep)) == pytest.approx(expected)

    def test_random_sub_scores_against_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            gates = rng.integers(0, 2, size=9).astype(float)
            ep = rng.uniform()
            s = ExtSubScores(*gates[:4], ep, *gates[4:])
            nc, dac, ttc, cf = gates[:4]
            ddc, tlc, lk, hc, ec = gates[4:]
            assert pdms(s) == pytest.approx(nc * dac * (5 * ep + 5 * ttc + 2 * cf) / 12)
            assert epdms(s) == pytest.approx(
                nc * dac * ddc * tlc * (5 * ep + 2 * lk + 2 * hc + 5 * ttc + 2 * ec) / 16
            )

    def test_weight_totals(self):
        assert WEIGHTS.pdms_total == 12.0
        assert WEIGHTS.epdms_total == 16.0

    def test_dataset_mean_is_mean_of_scene_scores(self):
        a = SubScores(nc=1.0, dac=1.0, ttc=1.0, cf=1.0, ep=1.0)
        b = SubScores(nc=0.0, dac=1.0, ttc=1.0, cf=1.0, ep=1.0)
        result = aggregate([pdms(a), pdms(b)], [a.as_dict(), b.as_dict()])
        assert result.score == pytest.approx(0.5)
        assert result.sub_means["nc"] == 0.5
        assert result.count == 2 and float(result) == result.score

    def test_empty_aggregate(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            mean([])


class TestCollision:
    def test_head_on_static_agent(self):
        scene = static_scene([parked(0.0, 10.0)])
        assert not collision_free(scene, scene.gt_trajectory, METRICS)

    def test_clear_of_a_roadside_agent(self):
        scene = static_scene([parked(2.5, 10.0, radius=0.4)])
        assert collision_free(scene, scene.gt_trajectory, METRICS)

    def test_near_pass_within_reach(self):
        # reach is 2.0; closest pass is 1.9 m
        scene = static_scene([parked(1.9, 7.25)])
        assert not collision_free(scene, scene.gt_trajectory, METRICS)

    def test_horizon_cut(self):
        scene = static_scene([parked(0.0, 14.0)])
        assert collision_free(scene, scene.gt_trajectory, METRICS, until=1.0)
        assert not collision_free(scene, scene.gt_trajectory, METRICS, until=3.0)

    def test_matches_brute_force_sampling(self):
        rng = np.random.default_rng(3)
        agree = total = 0
        for seed in range(40):
            scene = generate_scene(seed, "hard")
            for _ in range(3):
                noise = rng.normal(scale=1.0, size=(6, 2)).cumsum(axis=0)
                traj = Trajectory(scene.gt_trajectory.waypoints + noise)
                times = np.arange(0.0, 3.0 + 1e-9, 0.001)
                ego = position_along(traj, times)
                hit = any(
                    np.any(np.linalg.norm(ego - a.position(times), axis=1) < METRICS.ego_radius + a.footprint_radius)
                    for a in scene.agents
                )
                agree += collision_free(scene, traj, METRICS) == (not hit)
                total += 1
        assert agree / total >= 0.98


class TestSubMetrics:
    def test_ground_truth_on_an_empty_road(self):
        scene = static_scene()
        s = sub_scores(scene, scene.gt_trajectory, METRICS)
        assert s == SubScores(nc=1.0, dac=1.0, ttc=1.0, cf=1.0, ep=1.0)
        assert pdms(s) == 1.0

    def test_leaving_the_corridor(self):
        scene = static_scene(half_width=3.0)
        assert not drivable_area_compliant(scene, lateral_offset(3.5), METRICS)
        assert drivable_area_compliant(scene, lateral_offset(2.5), METRICS)

    def test_ttc_sees_an_agent_ahead(self):
        scene = static_scene([parked(0.0, 19.0)])
        assert not ttc_within_bound(scene, scene.gt_trajectory, METRICS)
        assert ttc_within_bound(static_scene(), static_scene().gt_trajectory, METRICS)

    def test_progress(self):
        scene = static_scene()
        assert ego_progress(scene, scene.gt_trajectory, METRICS) == pytest.approx(1.0)
        assert ego_progress(scene, lateral_offset(0.0, velocity=2.5), METRICS) == pytest.approx(0.5)
        assert ego_progress(scene, lateral_offset(0.0, velocity=-1.0), METRICS) == 0.0

    def test_progress_when_ground_truth_stands_still(self):
        scene = static_scene(velocity=0.0)
        assert ego_progress(scene, lateral_offset(0.0, velocity=0.0), METRICS) == 1.0

    def test_comfort(self):
        scene = static_scene()
        jerky = scene.gt_trajectory.waypoints.copy()
        jerky[2, 0] = 2.0
        s = sub_scores(scene, Trajectory(jerky), METRICS)
        assert s.cf == 0.0

    def test_direction_compliance(self):
        scene = static_scene()
        assert direction_compliant(scene, scene.gt_trajectory, METRICS)
        back = scene.gt_trajectory.waypoints.copy()
        back[4:, 1] = back[2, 1] - 1.0
        assert not direction_compliant(scene, Trajectory(back), METRICS)

    def test_stop_line(self):
        scene = static_scene(stop_line_s=30.0)
        assert not stop_line_compliant(scene, scene.gt_trajectory, METRICS)
        assert stop_line_compliant(scene, lateral_offset(0.0, velocity=2.0), METRICS)
        assert stop_line_compliant(static_scene(), static_scene().gt_trajectory, METRICS)

    def test_lane_keeping(self):
        scene = static_scene(half_width=3.0)
        assert lane_keeping(scene, lateral_offset(1.0), METRICS)
        assert not lane_keeping(scene, lateral_offset(2.0), METRICS)

    def test_history_comfort(self):
        scene = static_scene()
        assert history_comfort(scene, scene.gt_trajectory, METRICS)
        assert not history_comfort(scene, lateral_offset(0.0, velocity=12.0), METRICS)


class TestExecutionConsistency:
    def continuation(self, traj: Trajectory, shift=(0.0, 0.0)) -> np.ndarray:
        times = 0.5 + 0.5 * np.arange(1, 7)
        return position_along(traj, times) + np.asarray(shift)

    def test_consistent_replan(self):
        traj = static_scene().gt_trajectory
        assert execution_consistency(traj, self.continuation(traj), 0.5, METRICS)

    @pytest.mark.parametrize("shift, expected", [(0.4, True), (0.6, False)])
    def test_threshold(self, shift, expected):
        traj = static_scene().gt_trajectory
        assert execution_consistency(traj, self.continuation(traj, (shift, 0.0)), 0.5, METRICS) is expected

    def test_only_the_overlap_counts(self):
        traj = static_scene().gt_trajectory
        replan = self.continuation(traj)
        replan[-1] += 10.0  # beyond the first plan's horizon
        assert execution_consistency(traj, replan, 0.5, METRICS)

    def test_no_overlap(self):
        traj = static_scene().gt_trajectory
        assert execution_consistency(traj, np.zeros((2, 2)), 5.0, METRICS)

    def test_defaults_without_replan(self):
        scene = static_scene()
        s = ext_sub_scores(scene, scene.gt_trajectory, METRICS)
        assert s.ec == 1.0 and s.ec_defaulted
        replanned = ext_sub_scores(scene, scene.gt_trajectory, METRICS, self.continuation(scene.gt_trajectory))
        assert replanned.ec == 1.0 and not replanned.ec_defaulted
        assert epdms(replanned) == 1.0


class TestOpenLoop:
    def test_waypoint_index(self):
        assert [waypoint_index(h, 6) for h in (1.0, 2.0, 3.0)] == [1, 3, 5]

    def test_perfect_prediction(self):
        scene = static_scene()
        result = open_loop(scene.gt_trajectory, scene.gt_trajectory, scene, METRICS)
        assert result.l2_avg == 0.0 and result.collision_avg == 0.0

    def test_lateral_shift(self):
        scene = static_scene()
        result = open_loop(lateral_offset(1.0), scene.gt_trajectory, scene, METRICS)
        assert (result.l2_1s, result.l2_2s, result.l2_3s) == pytest.approx((1.0, 1.0, 1.0))
        assert result.l2_avg == pytest.approx(1.0)

    def test_collision_by_horizon(self):
        scene = static_scene([parked(0.0, 10.0)])
        result = open_loop(scene.gt_trajectory, scene.gt_trajectory, scene, METRICS)
        assert (result.collision_1s, result.collision_2s, result.collision_3s) == (0.0, 1.0, 1.0)

    def test_length_mismatch(self):
        scene = static_scene()
        with pytest.raises(ConfigurationError):
            open_loop(Trajectory(np.zeros((5, 2))), scene.gt_trajectory, scene, METRICS)
