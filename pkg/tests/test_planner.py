"""Receding-horizon trajectory optimizer: costs, solve quality, invariants."""

import math

import numpy as np
import pytest

from riskplan.fields import MarkingField, ObjectField, RiskFieldSet
from riskplan.planner import (
    NmpcConfig,
    Reference,
    SolveStatus,
    Trajectory,
    braking_seed,
    build_reference,
    shift_warm_start,
    solve,
    stage_cost,
    terminal_cost,
    trajectory_cost,
    trajectory_cost_gradient,
)
from riskplan.vehicle import EgoInput, EgoState, rollout

CONFIG = NmpcConfig()
STRAIGHT = (0.0, 0.0, 0.0, 0.0)  # lane centreline y(x) = 0


def straight_reference(v=8.0, y=0.0):
    state = EgoState(x=0.0, y=y, theta=0.0, v=v, delta=0.0)
    return build_reference(state, (y, 0.0, 0.0, 0.0), v, CONFIG)


def constant_velocity_inputs(config=CONFIG):
    return np.zeros((config.horizon, 2))


class TestStageCost:
    def test_zero_everything_zero_cost(self):
        ref = straight_reference()
        state = EgoState(
            x=ref.states[1, 0], y=ref.states[1, 1], theta=ref.states[1, 2],
            v=ref.states[1, 3], delta=ref.states[1, 4],
        )
        assert stage_cost(state, EgoInput(), ref.states[1], None, 1, CONFIG) == 0.0

    def test_velocity_error_weight(self):
        ref = straight_reference(v=8.0)
        state = EgoState(
            x=ref.states[1, 0], y=ref.states[1, 1], theta=0.0, v=7.0, delta=0.0,
        )
        assert stage_cost(state, EgoInput(), ref.states[1], None, 1, CONFIG) == (
            pytest.approx(0.001)
        )

    def test_input_weights(self):
        ref = straight_reference()
        state = EgoState(
            x=ref.states[1, 0], y=ref.states[1, 1], theta=0.0,
            v=ref.states[1, 3], delta=0.0,
        )
        cost = stage_cost(state, EgoInput(a=1.0, omega=1.0), ref.states[1], None, 1, CONFIG)
        assert cost == pytest.approx(1.01)

    def test_field_value_added(self):
        ref = straight_reference()
        centers = np.tile(np.array([0.0, 0.0, 0.0]), (CONFIG.horizon + 1, 1))
        fields = RiskFieldSet(objects=(ObjectField(4.0, 2.0, 1.0, centers),))
        state = EgoState(
            x=ref.states[1, 0], y=ref.states[1, 1], theta=0.0,
            v=ref.states[1, 3], delta=0.0,
        )
        base = stage_cost(state, EgoInput(), ref.states[1], None, 1, CONFIG)
        with_field = stage_cost(state, EgoInput(), ref.states[1], fields, 1, CONFIG)
        assert with_field - base == pytest.approx(
            fields.total(1, state.x, state.y), rel=1e-12
        )


class TestTerminalCost:
    def test_reference_state_zero(self):
        ref = straight_reference()
        state = EgoState(*ref.states[-1])
        assert terminal_cost(state, ref.states[-1], CONFIG) == 0.0

    def test_x_error_weight(self):
        ref = straight_reference()
        r = ref.states[-1]
        state = EgoState(x=r[0] + 1.0, y=r[1], theta=r[2], v=r[3], delta=r[4])
        assert terminal_cost(state, r, CONFIG) == pytest.approx(0.20)

    def test_y_error_weight(self):
        ref = straight_reference()
        r = ref.states[-1]
        state = EgoState(x=r[0], y=r[1] + 1.0, theta=r[2], v=r[3], delta=r[4])
        assert terminal_cost(state, r, CONFIG) == pytest.approx(0.02)

    def test_velocity_error_weight(self):
        ref = straight_reference()
        r = ref.states[-1]
        state = EgoState(x=r[0], y=r[1], theta=r[2], v=r[3] + 1.0, delta=r[4])
        assert terminal_cost(state, r, CONFIG) == pytest.approx(0.01)


class TestReference:
    def test_goal_ahead_at_horizon_times_speed(self):
        ref = straight_reference(v=8.0)
        assert ref.states.shape == (CONFIG.horizon + 1, 5)
        assert ref.states[-1, 0] == pytest.approx(CONFIG.horizon * CONFIG.t_s * 8.0)
        assert ref.states[-1, 1] == pytest.approx(0.0)

    def test_reference_on_lane_centerline(self):
        state = EgoState(x=5.0, y=1.2, theta=0.1, v=6.0, delta=0.0)
        ref = build_reference(state, (-1.75, 0.0, 0.0, 0.0), 6.0, CONFIG)
        assert ref.states[-1, 1] == pytest.approx(-1.75)
        np.testing.assert_allclose(ref.states[1:, 3], 6.0)


class TestSolve:
    def test_straight_road_cruise(self):
        # With no risk anywhere and the vehicle already tracking the lane at
        # the reference speed, the constant-velocity rollout is the optimum.
        ref = straight_reference(v=8.0)
        initial = EgoState(v=8.0)
        result = solve(initial, ref, None, CONFIG)
        assert result.status in (SolveStatus.CONVERGED, SolveStatus.MAX_ITERATIONS)
        assert abs(result.states[-1, 0] - ref.states[-1, 0]) < 0.1
        assert abs(result.states[-1, 1] - ref.states[-1, 1]) < 0.1
        cruise_cost = trajectory_cost(initial, ref, None, CONFIG,
                                      constant_velocity_inputs())
        assert result.cost <= cruise_cost + 1e-6

    def test_evasion_beats_constant_steering_families(self):
        # A high object field ahead on the lane: the solver must steer wide of
        # it, and do at least as well as the best constant-steering-rate input
        # family over a dense grid.  The vehicle starts nudged off the exact
        # symmetry axis, as any real approach would be.
        ref = straight_reference(v=8.0)
        initial = EgoState(y=0.3, v=8.0)
        centers = np.tile(np.array([20.0, 0.0, 0.0]), (CONFIG.horizon + 1, 1))
        fields = RiskFieldSet(objects=(ObjectField(4.0, 2.0, 1.0, centers),))
        result = solve(initial, ref, fields, CONFIG)

        def min_center_distance(states):
            return min(math.hypot(s[0] - 20.0, s[1]) for s in states)

        zero_rollout = rollout(
            initial, [EgoInput()] * CONFIG.horizon, CONFIG.vehicle, CONFIG.t_s
        )
        zero_states = np.array([[s.x, s.y, s.theta, s.v, s.delta] for s in zero_rollout])
        assert min_center_distance(result.states) > min_center_distance(zero_states)

        best_grid = math.inf
        for omega in np.linspace(-1.5, 1.5, 61):
            inputs = np.zeros((CONFIG.horizon, 2))
            inputs[:, 1] = omega
            best_grid = min(best_grid,
                            trajectory_cost(initial, ref, fields, CONFIG, inputs))
        assert result.cost <= best_grid + 1e-9

    def test_warm_start_fixed_point(self):
        ref = straight_reference(v=8.0)
        initial = EgoState(v=8.0)
        first = solve(initial, ref, None, CONFIG)
        assert first.status is SolveStatus.CONVERGED
        again = solve(initial, ref, None, CONFIG, warm_start=first)
        assert again.iterations <= 2
        assert again.cost == pytest.approx(first.cost, abs=1e-9)

    def test_deterministic(self):
        ref = straight_reference(v=7.0)
        initial = EgoState(y=0.5, v=6.0)
        centers = np.tile(np.array([25.0, 0.0, 0.0]), (CONFIG.horizon + 1, 1))
        fields = RiskFieldSet(objects=(ObjectField(3.0, 4.0, 2.0, centers),))
        a = solve(initial, ref, fields, CONFIG)
        b = solve(initial, ref, fields, CONFIG)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert a.cost == b.cost

    def test_descent_from_warm_start(self):
        ref = straight_reference(v=8.0)
        initial = EgoState(y=1.0, v=5.0)
        warm_inputs = np.zeros((CONFIG.horizon, 2))
        warm_inputs[:, 0] = 1.0
        states = rollout(
            initial,
            [EgoInput(a=1.0, omega=0.0)] * CONFIG.horizon,
            CONFIG.vehicle, CONFIG.t_s,
        )
        warm = Trajectory(
            states=np.array([[s.x, s.y, s.theta, s.v, s.delta] for s in states]),
            inputs=warm_inputs, cost=math.nan, status=SolveStatus.CONVERGED,
        )
        warm_cost = trajectory_cost(initial, ref, None, CONFIG, warm_inputs)
        result = solve(initial, ref, None, CONFIG, warm_start=warm)
        assert result.cost <= warm_cost + 1e-9

    def test_feasibility_of_returned_trajectories(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            ref = straight_reference(v=float(rng.uniform(4, 9)))
            initial = EgoState(
                y=float(rng.uniform(-1, 1)), theta=float(rng.uniform(-0.1, 0.1)),
                v=float(rng.uniform(0, 9)),
            )
            centers = np.tile(
                np.array([float(rng.uniform(10, 25)), float(rng.uniform(-1, 1)), 0.0]),
                (CONFIG.horizon + 1, 1),
            )
            fields = RiskFieldSet(objects=(ObjectField(4.0, 3.0, 1.5, centers),))
            result = solve(initial, ref, fields, CONFIG)
            assert result.max_bound_violation <= CONFIG.constraint_tolerance
            # dynamics hold exactly: re-roll the inputs and compare
            rerolled = rollout(
                EgoState(*result.states[0]),
                [EgoInput(a=u[0], omega=u[1]) for u in result.inputs],
                CONFIG.vehicle, CONFIG.t_s,
            )
            rerolled_arr = np.array(
                [[s.x, s.y, s.theta, s.v, s.delta] for s in rerolled]
            )
            np.testing.assert_allclose(result.states, rerolled_arr, atol=1e-12)

    def test_infeasible_start_reported(self):
        ref = straight_reference(v=8.0)
        result = solve(EgoState(v=25.0), ref, None, CONFIG)
        assert result.status is SolveStatus.INFEASIBLE_START

    def test_slightly_out_of_bounds_clamped(self):
        ref = straight_reference(v=8.0)
        initial = EgoState(v=10.0 + 5e-7)
        result = solve(initial, ref, None, CONFIG)
        assert result.status is not SolveStatus.INFEASIBLE_START
        assert result.states[0, 3] <= 10.0 + 1e-12

    def test_risk_monotone_in_amplitude(self):
        # Raising one object's amplitude and re-solving from the same warm
        # start can never produce a cheaper objective than the original
        # solution evaluated under the original amplitude.
        ref = straight_reference(v=8.0)
        initial = EgoState(v=8.0)
        centers = np.tile(np.array([18.0, 0.3, 0.0]), (CONFIG.horizon + 1, 1))
        base_fields = RiskFieldSet(objects=(ObjectField(2.0, 4.0, 2.0, centers),))
        base = solve(initial, ref, base_fields, CONFIG)
        for amplitude in (2.5, 3.0, 4.0):
            fields = RiskFieldSet(objects=(ObjectField(amplitude, 4.0, 2.0, centers),))
            re_solved = solve(initial, ref, fields, CONFIG, warm_start=base)
            assert re_solved.cost >= base.cost - 1e-9


class TestGradient:
    def test_matches_finite_differences_on_random_problems(self):
        rng = np.random.default_rng(77)
        for trial in range(20):
            v_ref = float(rng.uniform(3, 9))
            ref = straight_reference(v=v_ref)
            initial = EgoState(
                y=float(rng.uniform(-1.5, 1.5)),
                theta=float(rng.uniform(-0.15, 0.15)),
                v=float(rng.uniform(1, 9)),
                delta=float(rng.uniform(-0.05, 0.05)),
            )
            fields = None
            if trial % 2 == 0:
                centers = np.tile(
                    np.array([float(rng.uniform(8, 25)),
                              float(rng.uniform(-2, 2)), 0.0]),
                    (CONFIG.horizon + 1, 1),
                )
                fields = RiskFieldSet(
                    objects=(ObjectField(3.0, 3.0, 1.5, centers),),
                    markings=(MarkingField(1.5, 0.6,
                                           np.array([1.75, 0.0, 0.0, 0.0])),),
                )
            inputs = np.column_stack([
                rng.uniform(-1.0, 1.0, CONFIG.horizon),
                rng.uniform(-0.5, 0.5, CONFIG.horizon),
            ])
            _, grad = trajectory_cost_gradient(initial, ref, fields, CONFIG, inputs)
            fd = np.zeros_like(inputs)
            h = 1e-6
            for i in range(CONFIG.horizon):
                for j in range(2):
                    up = inputs.copy(); up[i, j] += h
                    dn = inputs.copy(); dn[i, j] -= h
                    fd[i, j] = (
                        trajectory_cost(initial, ref, fields, CONFIG, up)
                        - trajectory_cost(initial, ref, fields, CONFIG, dn)
                    ) / (2 * h)
            denom = max(float(np.linalg.norm(fd)), 1e-9)
            rel = float(np.linalg.norm(grad - fd)) / denom
            assert rel < 1e-4, f"trial {trial}: relative gradient error {rel:.2e}"


class TestShiftWarmStart:
    def test_constant_inputs_unchanged(self):
        inputs = np.tile(np.array([0.5, 0.1]), (CONFIG.horizon, 1))
        states = rollout(
            EgoState(v=3.0),
            [EgoInput(a=0.5, omega=0.1)] * CONFIG.horizon,
            CONFIG.vehicle, CONFIG.t_s,
        )
        prev = Trajectory(
            states=np.array([[s.x, s.y, s.theta, s.v, s.delta] for s in states]),
            inputs=inputs, cost=1.0, status=SolveStatus.CONVERGED,
        )
        shifted = shift_warm_start(prev, CONFIG)
        np.testing.assert_allclose(shifted.inputs, inputs)

    def test_shift_rule(self):
        config = NmpcConfig(horizon=3)
        inputs = np.array([[1.0, 0.1], [2.0, 0.2], [3.0, 0.3]])
        states = rollout(
            EgoState(v=1.0),
            [EgoInput(a=u[0], omega=u[1]) for u in inputs],
            config.vehicle, config.t_s,
        )
        prev = Trajectory(
            states=np.array([[s.x, s.y, s.theta, s.v, s.delta] for s in states]),
            inputs=inputs, cost=1.0, status=SolveStatus.CONVERGED,
        )
        shifted = shift_warm_start(prev, config)
        np.testing.assert_allclose(
            shifted.inputs, [[2.0, 0.2], [3.0, 0.3], [3.0, 0.3]]
        )
        # states re-rolled from the shifted initial state
        np.testing.assert_allclose(shifted.states[0], prev.states[1])

    def test_infeasible_previous_falls_back_to_zero_inputs(self):
        prev = Trajectory(
            states=np.zeros((CONFIG.horizon + 1, 5)),
            inputs=np.ones((CONFIG.horizon, 2)),
            cost=math.nan, status=SolveStatus.INFEASIBLE_START,
        )
        shifted = shift_warm_start(prev, CONFIG)
        np.testing.assert_allclose(shifted.inputs, 0.0)


class TestBrakingSeed:
    def test_decelerates_from_speed(self):
        seed = braking_seed(EgoState(v=8.0), CONFIG)
        assert seed.states.shape == (CONFIG.horizon + 1, 5)
        assert np.all(seed.inputs[:, 0] < 0.0)
        assert np.all(seed.inputs[:, 1] == 0.0)
        assert seed.states[-1, 3] < 8.0
        assert np.all(seed.states[:, 3] >= CONFIG.bounds.state_lower[3] - 1e-12)

    def test_states_consistent_with_inputs(self):
        seed = braking_seed(EgoState(v=6.0), CONFIG)
        rerolled = rollout(
            EgoState(*seed.states[0]),
            [EgoInput(a=u[0], omega=u[1]) for u in seed.inputs],
            CONFIG.vehicle, CONFIG.t_s,
        )
        arr = np.array([[s.x, s.y, s.theta, s.v, s.delta] for s in rerolled])
        # saturated rollout: velocity never exits its bounds
        assert np.all(seed.states[:, 3] <= CONFIG.bounds.state_upper[3] + 1e-12)
        assert seed.states[-1, 0] <= arr[-1, 0] + 1e-9


class TestConfigValidation:
    def test_horizon_minimum(self):
        with pytest.raises(ValueError):
            NmpcConfig(horizon=1)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            NmpcConfig(stage_weights=np.array([0, 0, 0, -0.001, 0]))

    def test_nonpositive_tolerance_rejected(self):
        with pytest.raises(ValueError):
            NmpcConfig(convergence_tolerance=0.0)
