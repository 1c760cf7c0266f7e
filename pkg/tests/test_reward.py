import numpy as np
import pytest

from shieldnav.dynamics import AttitudeCommand, QuadState
from shieldnav.fields import ScalarField, compute_esdf, compute_geodesic, interpolate
from shieldnav.gridworld import VoxelGrid
from shieldnav.reward import (
    NavRewardParams,
    RewardWeights,
    SafetyRewardParams,
    SmoothRewardParams,
    StepEvents,
    TerminalLimits,
    nav_reward,
    nav_reward_batch,
    safety_reward,
    smooth_reward,
    terminal_and_shaping,
    total_reward,
)


def constant_slope_field(dims=(12, 6, 4), res=0.5, slope=2.0):
    """Geodesic-kind field decreasing along +x at a constant rate."""
    xs = (np.arange(dims[0]) + 0.5) * res
    vals = slope * (xs[-1] - xs)[:, None, None] * np.ones((1, dims[1], dims[2]))
    return ScalarField(origin=np.zeros(3), resolution=res, dims=dims, values=vals, kind="geodesic")


def empty_grid(dims=(12, 12, 6), res=0.5):
    return VoxelGrid(origin=np.zeros(3), resolution=res, dims=dims, occupancy=np.zeros(dims, dtype=bool))


class TestNavReward:
    def test_zero_progress(self):
        phi = constant_slope_field()
        p = np.array([2.0, 1.0, 1.0])
        assert nav_reward(phi, p, p, NavRewardParams()) == 0.0

    def test_unclamped_arithmetic(self):
        # V_prev = 10.0, V_cur = 9.5, lam = 1, C = 1 -> 0.5
        phi = constant_slope_field(slope=2.0)  # dV/dx = -2
        params = NavRewardParams(lam=1.0, clip_c=1.0)
        p_prev = np.array([1.0, 1.0, 1.0])
        p_cur = p_prev + np.array([0.25, 0.0, 0.0])
        v_prev = interpolate(phi, p_prev).value
        v_cur = interpolate(phi, p_cur).value
        assert v_prev - v_cur == pytest.approx(0.5, abs=1e-12)
        assert nav_reward(phi, p_prev, p_cur, params) == pytest.approx(0.5, abs=1e-12)

    def test_clamped_progress(self):
        # 3 m of potential drop with C = 1 clamps to 1
        phi = constant_slope_field(slope=2.0)
        params = NavRewardParams(lam=1.0, clip_c=1.0)
        p_prev = np.array([1.0, 1.0, 1.0])
        p_cur = p_prev + np.array([1.5, 0.0, 0.0])
        assert nav_reward(phi, p_prev, p_cur, params) == pytest.approx(1.0)

    def test_wrong_kind_rejected(self):
        grid = empty_grid()
        esdf = compute_esdf(grid)
        with pytest.raises(ValueError):
            nav_reward(esdf, np.zeros(3), np.ones(3), NavRewardParams())

    def test_bounds_hold_everywhere(self):
        grid = empty_grid()
        phi = compute_geodesic(grid, (5.0, 5.0, 1.5), 0.0)
        params = NavRewardParams(lam=2.0, clip_c=0.5)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a = rng.uniform(0.1, 5.9, size=3)
            b = rng.uniform(0.1, 5.9, size=3)
            r = nav_reward(phi, a, b, params)
            assert -params.lam * params.clip_c - 1e-12 <= r <= params.lam * params.clip_c + 1e-12

    def test_telescoping_sum(self):
        grid = empty_grid()
        phi = compute_geodesic(grid, (5.0, 5.0, 1.5), 0.0)
        params = NavRewardParams(lam=1.0, clip_c=10.0)  # large C: no clipping
        rng = np.random.default_rng(1)
        pts = rng.uniform(0.5, 5.5, size=(40, 3))
        total = sum(
            nav_reward(phi, pts[i], pts[i + 1], params) for i in range(len(pts) - 1)
        )
        expected = params.lam * (
            interpolate(phi, pts[0]).value - interpolate(phi, pts[-1]).value
        )
        assert total == pytest.approx(expected, abs=1e-9)


class TestNavRewardBatch:
    def test_single_env_equals_scalar(self):
        phi = constant_slope_field()
        params = NavRewardParams()
        p_prev = np.array([[1.0, 1.0, 1.0]])
        p_cur = np.array([[1.3, 1.0, 1.0]])
        batch = nav_reward_batch({"s": phi}, ["s"], p_prev, p_cur, params)
        assert batch[0] == pytest.approx(nav_reward(phi, p_prev[0], p_cur[0], params))

    def test_interleaved_scenes_match_elementwise(self):
        phi_a = constant_slope_field(slope=1.0)
        phi_b = constant_slope_field(slope=3.0)
        fields = {"a": phi_a, "b": phi_b}
        env_scenes = ["a", "b", "a", "b", "b", "a"]
        rng = np.random.default_rng(5)
        p_prev = rng.uniform(1.0, 4.0, size=(6, 3))
        p_cur = rng.uniform(1.0, 4.0, size=(6, 3))
        params = NavRewardParams(lam=1.5, clip_c=0.7)
        batch = nav_reward_batch(fields, env_scenes, p_prev, p_cur, params)
        for i, scene in enumerate(env_scenes):
            single = nav_reward(fields[scene], p_prev[i], p_cur[i], params)
            assert batch[i] == pytest.approx(single, abs=1e-12)

    def test_stationary_envs_are_zero(self):
        phi = constant_slope_field()
        pts = np.tile(np.array([2.0, 1.0, 1.0]), (4, 1))
        out = nav_reward_batch({"s": phi}, ["s"] * 4, pts, pts, NavRewardParams())
        np.testing.assert_array_equal(out, 0.0)

    def test_missing_scene_raises(self):
        phi = constant_slope_field()
        with pytest.raises(KeyError):
            nav_reward_batch(
                {"s": phi}, ["nope"], np.zeros((1, 3)), np.ones((1, 3)), NavRewardParams()
            )


class TestSafetyReward:
    def setup_method(self):
        dims = (16, 16, 4)
        occ = np.zeros(dims, dtype=bool)
        occ[8, 8, :] = True  # single pillar
        self.grid = VoxelGrid(origin=np.zeros(3), resolution=0.5, dims=dims, occupancy=occ)
        self.esdf = compute_esdf(self.grid)

    def test_far_away_zero(self):
        params = SafetyRewardParams(gamma_cbf=1.0, d_safe=0.4)
        r = safety_reward(self.esdf, (1.0, 1.0, 1.0), (1.0, 0.5, 0.0), params)
        assert r == 0.0

    def test_lower_clip_at_delta_min(self):
        # h = 0.1, hdot = -3, gamma = 1 -> clip(-2.9, -2, 0) = -2.0
        params = SafetyRewardParams(gamma_cbf=1.0, d_safe=0.4, delta_min=-2.0)
        vals = np.full((2, 1, 1), 0.5)
        vals[1, 0, 0] = 0.5 - 3.0  # gradient -3 per meter along x
        esdf = ScalarField(
            origin=np.zeros(3), resolution=1.0, dims=(2, 1, 1), values=vals, kind="esdf"
        )
        p = (1.0, 0.5, 0.5)  # midpoint: value -1.0... use left cell instead
        p = (0.5, 0.5, 0.5)  # at first center: value 0.5, h = 0.1
        r = safety_reward(esdf, p, (1.0, 0.0, 0.0), params)  # hdot = -3
        assert r == pytest.approx(-2.0)

    def test_nonnegative_barrier_condition_gives_zero(self):
        # h = 0.5, hdot = -0.2, gamma = 1 -> clip(0.3, -2, 0) = 0
        vals = np.full((2, 1, 1), 0.9)
        vals[1, 0, 0] = 0.7  # gradient -0.2 per meter
        esdf = ScalarField(
            origin=np.zeros(3), resolution=1.0, dims=(2, 1, 1), values=vals, kind="esdf"
        )
        params = SafetyRewardParams(gamma_cbf=1.0, d_safe=0.4)
        r = safety_reward(esdf, (0.5, 0.5, 0.5), (1.0, 0.0, 0.0), params)
        assert r == 0.0

    def test_range_bound_property(self):
        params = SafetyRewardParams()
        rng = np.random.default_rng(9)
        for _ in range(1000):
            p = rng.uniform(0.3, 7.7, size=3)
            v = rng.uniform(-6, 6, size=3)
            r = safety_reward(self.esdf, p, v, params)
            assert params.delta_min <= r <= 0.0

    def test_sign_matches_barrier_condition(self):
        params = SafetyRewardParams()
        rng = np.random.default_rng(10)
        from shieldnav.fields import interpolate as interp

        for _ in range(300):
            p = rng.uniform(0.5, 7.5, size=3)
            v = rng.uniform(-5, 5, size=3)
            s = interp(self.esdf, p)
            h = s.value - params.d_safe
            hdot = float(s.gradient @ v)
            r = safety_reward(self.esdf, p, v, params)
            if hdot + params.gamma_cbf * h >= 0:
                assert r == 0.0
            else:
                assert r < 0.0


class TestSmoothReward:
    def test_hover_magnitude_only(self):
        params = SmoothRewardParams(w_mag=0.3, w_delta=0.7, f_max=24.525, tilt_max=0.6)
        hover = AttitudeCommand.hover()
        r = smooth_reward(hover, hover, params)
        assert r == pytest.approx(-0.3 * (9.81 / 24.525) ** 2, abs=1e-12)

    def test_equal_commands_kill_delta_term(self):
        params = SmoothRewardParams(w_mag=0.0, w_delta=5.0)
        cmd = AttitudeCommand(f_n=12.0, roll=0.3, pitch=-0.2, yaw=1.0)
        assert smooth_reward(cmd, cmd, params) == 0.0

    def test_larger_change_strictly_worse(self):
        params = SmoothRewardParams()
        prev = AttitudeCommand.hover()
        small = AttitudeCommand(f_n=9.81, roll=0.05, pitch=0.0, yaw=0.0)
        large = AttitudeCommand(f_n=9.81, roll=0.25, pitch=0.0, yaw=0.0)
        assert smooth_reward(large, prev, params) < smooth_reward(small, prev, params)

    def test_never_positive(self):
        params = SmoothRewardParams()
        rng = np.random.default_rng(2)
        for _ in range(1000):
            a = AttitudeCommand.from_array(rng.uniform([-1, -1, -1, -3], [25, 1, 1, 3]))
            b = AttitudeCommand.from_array(rng.uniform([-1, -1, -1, -3], [25, 1, 1, 3]))
            assert smooth_reward(a, b, params) <= 0.0


class TestTerminalAndShaping:
    def test_at_goal_success(self):
        state = QuadState.hover_at((3.0, 2.0, 1.0))
        limits = TerminalLimits(success_radius=5.0)
        _, success, _, _ = terminal_and_shaping(state, (3.0, 2.0, 1.0), StepEvents(), limits)
        assert success == 1.0

    def test_collision_event(self):
        state = QuadState.hover_at((0.0, 0.0, 1.0))
        limits = TerminalLimits()
        collision, _, _, _ = terminal_and_shaping(
            state, (50.0, 0.0, 1.0), StepEvents(collision=True), limits
        )
        assert collision == -1.0

    def test_speed_at_target_zero(self):
        limits = TerminalLimits(v_target=3.0)
        state = QuadState(p=np.zeros(3), v=np.array([3.0, 0.0, 0.0]), R=np.eye(3))
        _, _, speed, _ = terminal_and_shaping(state, (50.0, 0, 0), StepEvents(), limits)
        assert speed == 0.0
        fast = QuadState(p=np.zeros(3), v=np.array([5.0, 0.0, 0.0]), R=np.eye(3))
        _, _, speed_fast, _ = terminal_and_shaping(fast, (50.0, 0, 0), StepEvents(), limits)
        assert speed_fast == pytest.approx(-4.0)

    def test_height_zero_inside_band(self):
        limits = TerminalLimits(z_low=0.5, z_high=2.5)
        inside = QuadState.hover_at((0, 0, 1.7))
        _, _, _, height = terminal_and_shaping(inside, (50, 0, 0), StepEvents(), limits)
        assert height == 0.0
        below = QuadState.hover_at((0, 0, 0.2))
        _, _, _, height_below = terminal_and_shaping(below, (50, 0, 0), StepEvents(), limits)
        assert height_below == pytest.approx(-0.09)


class TestTotalReward:
    def test_zero_weights_zero_total(self):
        weights = RewardWeights(0, 0, 0, 0, 0, 0, 0)
        bd = total_reward(1.0, -2.0, -0.1, -1.0, 1.0, -0.5, -0.2, weights)
        assert bd.total == 0.0

    def test_stationary_drone_nav_only(self):
        weights = RewardWeights(1.0, 0, 0, 0, 0, 0, 0)
        bd = total_reward(0.0, -1.0, -0.5, 0.0, 0.0, -1.0, -1.0, weights)
        assert bd.total == 0.0

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            terms = rng.standard_normal(7)
            w = rng.standard_normal(7)
            weights = RewardWeights(*w)
            bd = total_reward(*terms, weights)
            assert bd.total == pytest.approx(float(np.dot(w, terms)), abs=1e-12)
            np.testing.assert_array_equal(bd.terms(), terms)
