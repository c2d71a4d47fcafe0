"""Receding-horizon trajectory optimization over risk fields.

The program is transcribed by single shooting: the decision variables are
the N input pairs, states follow from the bicycle model, so the dynamics
hold exactly by construction.  Input bounds are enforced by projection,
state bounds by a quadratic hinge penalty.  The objective couples quadratic
tracking and input costs with the total risk field evaluated along the
planned positions; its gradient is computed analytically with a backward
(adjoint) sweep.  The solver is a limited-memory quasi-Newton descent with
backtracking line search, deterministic for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .fields import FieldEvaluator, RiskFieldSet
from .vehicle import Bounds, EgoInput, EgoState, VehicleParams, default_bounds, step_raw


@dataclass
class NmpcConfig:
    """Horizon, weights, bounds and solver settings."""

    horizon: int = 23
    t_s: float = 0.15
    stage_weights: np.ndarray = dc_field(
        default_factory=lambda: np.array([0.0, 0.0, 0.0, 0.001, 0.0])
    )
    input_weights: np.ndarray = dc_field(default_factory=lambda: np.array([0.01, 1.0]))
    terminal_weights: np.ndarray = dc_field(
        default_factory=lambda: np.array([0.20, 0.02, 0.0, 0.01, 0.0])
    )
    bounds: Bounds = dc_field(default_factory=default_bounds)
    vehicle: VehicleParams = dc_field(default_factory=VehicleParams)
    max_iterations: int = 200
    convergence_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-6
    state_penalty_weight: float = 1e3
    quasi_newton_memory: int = 10
    displacement_cap: float = 1.0

    def __post_init__(self) -> None:
        self.stage_weights = np.asarray(self.stage_weights, dtype=float)
        self.input_weights = np.asarray(self.input_weights, dtype=float)
        self.terminal_weights = np.asarray(self.terminal_weights, dtype=float)
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.t_s <= 0:
            raise ValueError("t_s must be positive")
        for name in ("stage_weights", "terminal_weights"):
            if getattr(self, name).shape != (5,):
                raise ValueError(f"{name} must have 5 entries")
        if self.input_weights.shape != (2,):
            raise ValueError("input_weights must have 2 entries")
        if (
            np.any(self.stage_weights < 0)
            or np.any(self.input_weights < 0)
            or np.any(self.terminal_weights < 0)
        ):
            raise ValueError("weights must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.convergence_tolerance <= 0 or self.constraint_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.displacement_cap <= 0:
            raise ValueError("displacement_cap must be positive")
        if self.state_penalty_weight <= 0:
            raise ValueError("state_penalty_weight must be positive")


class SolveStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    INFEASIBLE_START = "infeasible-start"


@dataclass
class Reference:
    """Stage references r_1..r_N (rows of an (N+1, 5) array; row 0 unused by
    the cost but kept for alignment)."""

    states: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 5:
            raise ValueError("reference states must be an (N+1, 5) array")


def build_reference(
    state: EgoState,
    centerline: Tuple[float, float, float, float],
    speed_limit: float,
    config: NmpcConfig,
) -> Reference:
    """Stage references along a lane centerline at the allowed speed.

    Stage k sits ``k * t_s * speed_limit`` ahead of the current position, on
    the centerline polynomial, heading along its tangent; the terminal row is
    the receding goal.
    """
    c0, c1, c2, c3 = (float(c) for c in centerline)
    n = config.horizon
    refs = np.zeros((n + 1, 5))
    for k in range(n + 1):
        xk = state.x + k * config.t_s * speed_limit
        yk = c0 + xk * (c1 + xk * (c2 + xk * c3))
        slope = c1 + xk * (2.0 * c2 + xk * 3.0 * c3)
        refs[k, 0] = xk
        refs[k, 1] = yk
        refs[k, 2] = math.atan(slope)
        refs[k, 3] = speed_limit
    return Reference(refs)


@dataclass
class Trajectory:
    """Planned states/inputs with solver diagnostics."""

    states: np.ndarray
    inputs: np.ndarray
    cost: float
    status: SolveStatus
    iterations: int = 0
    max_bound_violation: float = 0.0
    initial_cost: float = math.nan

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)

    def first_input(self) -> EgoInput:
        return EgoInput(float(self.inputs[0, 0]), float(self.inputs[0, 1]))

    def initial_state(self) -> EgoState:
        return EgoState.from_array(self.states[0])


def stage_cost(
    state: EgoState,
    inp: EgoInput,
    reference_state,
    fields: Optional[RiskFieldSet],
    k: int,
    config: NmpcConfig,
) -> float:
    """Weighted squared state error and input effort plus the risk at the
    stage position."""
    err = state.as_array() - np.asarray(reference_state, dtype=float)
    cost = float(config.stage_weights @ (err * err))
    u = inp.as_array()
    cost += float(config.input_weights @ (u * u))
    if fields is not None and len(fields):
        cost += fields.total(k, state.x, state.y)
    return cost


def terminal_cost(state: EgoState, reference_state, config: NmpcConfig) -> float:
    """Weighted squared deviation from the terminal reference."""
    err = state.as_array() - np.asarray(reference_state, dtype=float)
    return float(config.terminal_weights @ (err * err))


class _ShootingProblem:
    """Cost and analytic gradient of the input sequence via forward rollout
    and a backward adjoint sweep."""

    def __init__(
        self,
        initial: np.ndarray,
        reference: np.ndarray,
        evaluator: Optional[FieldEvaluator],
        config: NmpcConfig,
    ) -> None:
        self.x0 = np.asarray(initial, dtype=float)
        n = config.horizon
        if reference.shape != (n + 1, 5):
            raise ValueError("reference shape does not match the horizon")
        self.ref = reference
        self.evaluator = evaluator
        self.cfg = config
        self.n = n
        self.ts = config.t_s
        self.wheelbase = config.vehicle.wheelbase
        self.w_stage = config.stage_weights
        self.w_input = config.input_weights
        self.w_term = config.terminal_weights
        self.rho = config.state_penalty_weight
        self.s_lo = config.bounds.state_lower
        self.s_hi = config.bounds.state_upper

    def rollout_array(self, inputs: np.ndarray) -> np.ndarray:
        s = np.empty((self.n + 1, 5))
        s[0] = self.x0
        x, y, th, v, de = (float(c) for c in self.x0)
        ts, wb = self.ts, self.wheelbase
        rows = inputs.tolist()
        for k in range(self.n):
            a, om = rows[k]
            x, y, th, v, de = step_raw(x, y, th, v, de, a, om, wb, ts)
            s[k + 1, 0] = x
            s[k + 1, 1] = y
            s[k + 1, 2] = th
            s[k + 1, 3] = v
            s[k + 1, 4] = de
        return s

    def rollout_saturated(self, inputs: np.ndarray):
        """Roll out with velocity and steering saturating at the state bounds.

        Returns the state array and a per-step (n, 2) multiplier array that is
        0 where the v or delta update saturated and 1 elsewhere; the
        multipliers gate the adjoint sweep through saturated transitions.
        """
        s = np.empty((self.n + 1, 5))
        mult = np.ones((self.n, 2))
        s[0] = self.x0
        x, y, th, v, de = (float(c) for c in self.x0)
        ts, wb = self.ts, self.wheelbase
        v_lo, v_hi = float(self.s_lo[3]), float(self.s_hi[3])
        d_lo, d_hi = float(self.s_lo[4]), float(self.s_hi[4])
        rows = inputs.tolist()
        for k in range(self.n):
            a, om = rows[k]
            x, y, th, v, de = step_raw(x, y, th, v, de, a, om, wb, ts)
            if v > v_hi:
                v = v_hi
                mult[k, 0] = 0.0
            elif v < v_lo:
                v = v_lo
                mult[k, 0] = 0.0
            if de > d_hi:
                de = d_hi
                mult[k, 1] = 0.0
            elif de < d_lo:
                de = d_lo
                mult[k, 1] = 0.0
            s[k + 1, 0] = x
            s[k + 1, 1] = y
            s[k + 1, 2] = th
            s[k + 1, 3] = v
            s[k + 1, 4] = de
        return s, mult

    def _pieces(self, inputs: np.ndarray, with_grad: bool):
        s, mult = self.rollout_saturated(inputs)
        err = s - self.ref
        stage_err = err[1 : self.n]
        track = float(np.einsum("ki,i,ki->", stage_err, self.w_stage, stage_err))
        term_err = err[self.n]
        track += float(self.w_term @ (term_err * term_err))
        effort = float(np.einsum("ki,i,ki->", inputs, self.w_input, inputs))
        tail = s[1:]
        over = np.maximum(tail - self.s_hi, 0.0)
        under = np.maximum(self.s_lo - tail, 0.0)
        penalty = self.rho * float(np.sum(over * over) + np.sum(under * under))
        if self.evaluator is not None:
            risk, rgx, rgy = self.evaluator.stage_risk(
                tail[:, 0], tail[:, 1], with_grad=with_grad
            )
            risk_total = float(risk.sum())
        else:
            risk_total, rgx, rgy = 0.0, None, None
        cost = track + effort + penalty + risk_total
        if not with_grad:
            return cost, None, s
        # per-stage state-cost gradients
        g_state = np.zeros((self.n + 1, 5))
        g_state[1 : self.n] = 2.0 * self.w_stage * stage_err
        g_state[self.n] = 2.0 * self.w_term * term_err
        g_state[1:] += 2.0 * self.rho * (over - under)
        if rgx is not None:
            g_state[1:, 0] += rgx
            g_state[1:, 1] += rgy
        # backward adjoint sweep; saturated v/delta transitions pass nothing
        # through to the earlier state or the driving input
        grad = 2.0 * self.w_input * inputs
        ts, wb = self.ts, self.wheelbase
        srows = s.tolist()
        grows = g_state.tolist()
        mrows = mult.tolist()
        lx, ly, lt, lv, ld = grows[self.n]
        for k in range(self.n - 1, -1, -1):
            m_v, m_d = mrows[k]
            grad[k, 0] += ts * lv * m_v
            grad[k, 1] += ts * ld * m_d
            if k == 0:
                break
            th, v, de = srows[k][2], srows[k][3], srows[k][4]
            cth = math.cos(th)
            sth = math.sin(th)
            tde = math.tan(de)
            sec2 = 1.0 + tde * tde
            gk = grows[k]
            nlt = lt + ts * v * (cth * ly - sth * lx) + gk[2]
            nlv = m_v * lv + ts * (cth * lx + sth * ly) + ts * tde / wb * lt + gk[3]
            nld = m_d * ld + ts * v * sec2 / wb * lt + gk[4]
            lx = lx + gk[0]
            ly = ly + gk[1]
            lt, lv, ld = nlt, nlv, nld
        return cost, grad, s

    def cost(self, inputs: np.ndarray) -> float:
        return self._pieces(inputs, with_grad=False)[0]

    def cost_grad(self, inputs: np.ndarray):
        cost, grad, _ = self._pieces(inputs, with_grad=True)
        return cost, grad

    def cost_grad_states(self, inputs: np.ndarray):
        return self._pieces(inputs, with_grad=True)


def trajectory_cost(
    initial: EgoState,
    reference: Reference,
    fields: Optional[RiskFieldSet],
    config: NmpcConfig,
    inputs: np.ndarray,
) -> float:
    """Total objective of an input sequence from the given initial state."""
    problem = _make_problem(initial, reference, fields, config)
    return problem.cost(np.asarray(inputs, dtype=float))


def trajectory_cost_gradient(
    initial: EgoState,
    reference: Reference,
    fields: Optional[RiskFieldSet],
    config: NmpcConfig,
    inputs: np.ndarray,
):
    """Objective value and its analytic gradient with respect to the inputs."""
    problem = _make_problem(initial, reference, fields, config)
    return problem.cost_grad(np.asarray(inputs, dtype=float))


def _make_problem(
    initial: EgoState,
    reference: Reference,
    fields: Optional[RiskFieldSet],
    config: NmpcConfig,
) -> _ShootingProblem:
    evaluator = None
    if fields is not None and len(fields):
        evaluator = FieldEvaluator(fields, config.horizon)
    return _ShootingProblem(initial.as_array(), reference.states, evaluator, config)


def _max_state_violation(states: np.ndarray, bounds: Bounds) -> float:
    over = np.maximum(states - bounds.state_upper, 0.0)
    under = np.maximum(bounds.state_lower - states, 0.0)
    return float(max(over.max(initial=0.0), under.max(initial=0.0)))


def _two_loop(g: np.ndarray, mem) -> np.ndarray:
    """L-BFGS two-loop recursion; mem holds (s, y, 1/(s.y)) triples."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        alpha = rho * float(s @ q)
        alphas.append(alpha)
        q -= alpha * y
    if mem:
        s, y, _ = mem[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), alpha in zip(mem, reversed(alphas)):
        beta = rho * float(y @ q)
        q += (alpha - beta) * s
    return q


def _minimize_projected(problem: _ShootingProblem, u0: np.ndarray, config: NmpcConfig):
    """Projected limited-memory quasi-Newton descent with backtracking.

    Returns (inputs, cost, initial cost, iterations, converged flag).  The
    accepted iterate sequence is monotone, so the result never costs more
    than the starting point.
    """
    lo = np.tile(config.bounds.input_lower, (config.horizon, 1))
    hi = np.tile(config.bounds.input_upper, (config.horizon, 1))
    cap = config.displacement_cap
    u = np.clip(u0, lo, hi)
    f, g, states = problem.cost_grad_states(u)
    f0 = f
    mem: list = []
    iterations = 0
    converged = False
    small_steps = 0
    for _ in range(config.max_iterations):
        pg = u - np.clip(u - g, lo, hi)
        if float(np.abs(pg).max()) <= config.convergence_tolerance:
            converged = True
            break
        d = -_two_loop(g.ravel(), mem).reshape(u.shape)
        trial = np.clip(u + d, lo, hi) - u
        if float((g * trial).sum()) >= 0.0:
            d = -g
        alpha = 1.0
        accepted = False
        for _ in range(30):
            u_new = np.clip(u + alpha * d, lo, hi)
            step_vec = u_new - u
            slope = float((g * step_vec).sum())
            if slope < 0.0:
                f_new, g_new, s_new = problem.cost_grad_states(u_new)
                # reject steps that teleport any stage position far enough to
                # hop across a narrow risk ridge unseen by the line search
                moved = float(np.abs(s_new[:, :2] - states[:, :2]).max())
                if moved <= cap and f_new <= f + 1e-4 * slope:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            converged = True  # no admissible descent step remains
            break
        s_vec = (u_new - u).ravel()
        y_vec = (g_new - g).ravel()
        sy = float(s_vec @ y_vec)
        if sy > 1e-12:
            mem.append((s_vec, y_vec, 1.0 / sy))
            if len(mem) > config.quasi_newton_memory:
                mem.pop(0)
        decrease = f - f_new
        u, f, g, states = u_new, f_new, g_new, s_new
        iterations += 1
        if decrease <= config.convergence_tolerance * max(1.0, abs(f)):
            small_steps += 1
            if small_steps >= 2:
                converged = True
                break
        else:
            small_steps = 0
    return u, f, f0, iterations, converged


def solve(
    initial: EgoState,
    reference: Reference,
    fields: Optional[RiskFieldSet],
    config: NmpcConfig,
    warm_start: Optional[Trajectory] = None,
) -> Trajectory:
    """Plan a trajectory from the initial state.

    The warm start supplies the starting input sequence (zero inputs when
    absent).  The returned cost never exceeds the cost of that starting
    sequence.  An initial state violating the state bounds by more than the
    constraint tolerance yields an infeasible-start trajectory (zero-input
    rollout); smaller violations are clamped away.
    """
    x0 = initial.as_array()
    violation = _max_state_violation(x0[None, :], config.bounds)
    evaluator = None
    if fields is not None and len(fields):
        evaluator = FieldEvaluator(fields, config.horizon)
    if violation > config.constraint_tolerance:
        problem = _ShootingProblem(x0, reference.states, evaluator, config)
        inputs = np.zeros((config.horizon, 2))
        states = problem.rollout_array(inputs)
        cost = problem.cost(inputs)
        return Trajectory(
            states,
            inputs,
            cost,
            SolveStatus.INFEASIBLE_START,
            iterations=0,
            max_bound_violation=_max_state_violation(states, config.bounds),
            initial_cost=cost,
        )
    x0 = np.clip(x0, config.bounds.state_lower, config.bounds.state_upper)
    problem = _ShootingProblem(x0, reference.states, evaluator, config)
    if warm_start is not None:
        u0 = np.asarray(warm_start.inputs, dtype=float)
        if u0.shape != (config.horizon, 2):
            raise ValueError("warm start input shape does not match the horizon")
    else:
        u0 = np.zeros((config.horizon, 2))
    u, cost, initial_cost, iterations, converged = _minimize_projected(
        problem, u0, config
    )
    # where the optimizer's rollout saturated v or delta at a state bound,
    # rewrite the driving input to the value that lands exactly on the bound;
    # the returned states are then the plain forward rollout of the returned
    # inputs, so dynamics consistency and state feasibility both hold
    states, mult = problem.rollout_saturated(u)
    if not mult.all():
        u = u.copy()
        ts = config.t_s
        for k in range(config.horizon):
            if mult[k, 0] == 0.0:
                u[k, 0] = (states[k + 1, 3] - states[k, 3]) / ts
            if mult[k, 1] == 0.0:
                u[k, 1] = (states[k + 1, 4] - states[k, 4]) / ts
        states = problem.rollout_array(u)
    status = SolveStatus.CONVERGED if converged else SolveStatus.MAX_ITERATIONS
    return Trajectory(
        states,
        u,
        cost,
        status,
        iterations=iterations,
        max_bound_violation=_max_state_violation(states, config.bounds),
        initial_cost=initial_cost,
    )


def braking_seed(initial: EgoState, config: NmpcConfig) -> Trajectory:
    """Comfort-braking start sequence rolled out from the initial state.

    A warm start whose tail already passes beyond an obstacle cannot be pulled
    back by a local descent: retreating mid-horizon stages drags the tail back
    through the risk ridge, which raises the cost before it lowers it.  Seeding
    a second solve with steady braking (a quarter of the acceleration bound,
    straight steering) puts the start on the near side of the ridge so the yielding
    local optimum is reachable; the caller keeps whichever solution costs less.
    """
    inputs = np.zeros((config.horizon, 2))
    inputs[:, 0] = config.bounds.input_lower[0] / 4.0
    problem = _ShootingProblem(
        initial.as_array(), np.zeros((config.horizon + 1, 5)), None, config
    )
    states = problem.rollout_array(inputs)
    return Trajectory(
        states,
        inputs,
        math.nan,
        SolveStatus.CONVERGED,
        iterations=0,
        max_bound_violation=_max_state_violation(states, config.bounds),
    )


def shift_warm_start(previous: Trajectory, config: NmpcConfig) -> Trajectory:
    """Receding-horizon shift: drop the first input, duplicate the last, and
    re-roll the states from the previous trajectory's second state.

    A previous infeasible start carries no useful inputs, so the shift falls
    back to a zero-input rollout.
    """
    if previous.status is SolveStatus.INFEASIBLE_START:
        inputs = np.zeros((config.horizon, 2))
    else:
        prev = np.asarray(previous.inputs, dtype=float)
        inputs = np.vstack([prev[1:], prev[-1:]])
    start = previous.states[1] if previous.states.shape[0] > 1 else previous.states[0]
    problem = _ShootingProblem(
        np.asarray(start, dtype=float), np.zeros((config.horizon + 1, 5)), None, config
    )
    states = problem.rollout_array(inputs)
    return Trajectory(
        states,
        inputs,
        math.nan,
        previous.status,
        iterations=0,
        max_bound_violation=_max_state_violation(states, config.bounds),
    )
