"""Closed-loop scenario simulation.

The loop runs a kinematic plant at a fine step and replans every few plant
steps: each planning cycle refreshes the scene graph (poses, classification
certainty, collision probability, situational predicates), applies the rule
set, assembles risk fields from the resolved conclusions, and solves the
receding-horizon problem warm-started from the previous solution.  The first
input is either applied directly (perfect actuation) or tracked by simple
P/PD feedback controllers.  Scripted actors move at constant velocity; actors
with a trigger distance stand still until the ego gets close.

Metrics (clearances, accelerations, standstill distance, lane departures,
goal completion) are accumulated every plant step; solver health (dynamics
residual, bound violation, descent) is audited every cycle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from statistics import median
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .collision import (
    CollisionParams,
    ObstacleEdgeObservation,
    smoothed_collision_probability,
)
from .fields import RiskFieldSet, build_risk_fields
from .geometry import polygon_distance, polygons_overlap, rect_corners
from .graph import SceneGraph, default_ontology
from .planner import (
    NmpcConfig,
    Reference,
    SolveStatus,
    Trajectory,
    braking_seed,
    build_reference,
    shift_warm_start,
    solve,
)
from .rules import RuleSet, apply_rules, crossing_acceptability, default_rule_set, risk_level
from .scenarios import ActorSpec, Scenario
from .vehicle import EgoInput, EgoState, VehicleParams, step_raw

#: scenario actor classes mapped onto graph entity types
_CLASS_TO_TYPE = {
    "car": "vehicle",
    "pedestrian": "pedestrian",
    "artificial_object": "artificial-object",
}

#: relations re-derived from scratch on every planning cycle
_DERIVED_RELATIONS = ("crossing_acceptability", "has_risk_level", "is_on")


# ---------------------------------------------------------------------------
# object tracks


@dataclass
class ObjectTrack:
    """Observed traffic participant with scripted constant-velocity motion."""

    track_id: str
    object_class: str
    x: float
    y: float
    heading: float
    speed: float
    length: float
    width: float
    height: float
    certainty: float = 0.0
    time_in_scene: float = 0.0
    moving: bool = True
    trigger_distance: Optional[float] = None

    @classmethod
    def from_actor(cls, actor: ActorSpec) -> "ObjectTrack":
        return cls(
            track_id=actor.actor_id,
            object_class=actor.object_class,
            x=actor.x,
            y=actor.y,
            heading=actor.heading,
            speed=actor.speed,
            length=actor.length,
            width=actor.width,
            height=actor.height,
            moving=actor.trigger_distance is None,
            trigger_distance=actor.trigger_distance,
        )

    @property
    def effective_speed(self) -> float:
        """Speed actually driven: zero while waiting for the trigger."""
        return self.speed if self.moving else 0.0

    def advance(self, dt: float) -> None:
        s = self.effective_speed
        if s:
            self.x += dt * s * math.cos(self.heading)
            self.y += dt * s * math.sin(self.heading)

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.heading, self.length, self.width)


@dataclass(frozen=True)
class CertaintyModel:
    """Simulated classifier confidence: grows with exposure time and
    proximity, clamped and kept non-decreasing by a running max."""

    base: float = 0.3
    rate_t: float = 0.1  # per second in scene
    rate_d: float = 0.005  # per metre closer than d_ref
    d_ref: float = 60.0
    cap: float = 0.99


def update_certainty(
    track: ObjectTrack, distance: float, dt: float, model: CertaintyModel = CertaintyModel()
) -> float:
    """Advance a track's classification certainty by one observation."""
    fresh = model.base + model.rate_t * track.time_in_scene
    fresh += model.rate_d * max(0.0, model.d_ref - distance)
    fresh = min(max(fresh, 0.0), model.cap)
    track.certainty = max(track.certainty, fresh)
    track.time_in_scene += dt
    return track.certainty


def predict_constant_velocity(track: ObjectTrack, n: int, t_s: float) -> np.ndarray:
    """(n+1, 3) poses advanced along the current heading at current speed."""
    poses = np.empty((n + 1, 3))
    s = track.effective_speed
    ks = np.arange(n + 1)
    poses[:, 0] = track.x + ks * (t_s * s * math.cos(track.heading))
    poses[:, 1] = track.y + ks * (t_s * s * math.sin(track.heading))
    poses[:, 2] = track.heading
    return poses


# ---------------------------------------------------------------------------
# tracking controllers


@dataclass(frozen=True)
class ControllerGains:
    """P speed tracking and PD lateral tracking."""

    k_p: float = 1.0
    k_py: float = 0.5
    k_dy: float = 0.1


def longitudinal_controller(
    v_measured: float, v_planned: float, gains: ControllerGains, bounds
) -> float:
    a = gains.k_p * (v_planned - v_measured)
    return float(min(max(a, bounds.input_lower[0]), bounds.input_upper[0]))


def lateral_controller(
    error: float, error_rate: float, gains: ControllerGains, bounds
) -> float:
    omega = gains.k_py * error + gains.k_dy * error_rate
    return float(min(max(omega, bounds.input_lower[1]), bounds.input_upper[1]))


# ---------------------------------------------------------------------------
# ego geometry and per-object collision probability


def ego_box_center(state: EgoState, vehicle: VehicleParams) -> Tuple[float, float]:
    off = vehicle.center_offset
    return (
        state.x + off * math.cos(state.theta),
        state.y + off * math.sin(state.theta),
    )


def ego_corners(state: EgoState, vehicle: VehicleParams) -> np.ndarray:
    cx, cy = ego_box_center(state, vehicle)
    return rect_corners(cx, cy, state.theta, vehicle.length, vehicle.width)


def edge_observations(
    state: EgoState, vehicle: VehicleParams, track: ObjectTrack
) -> List[ObstacleEdgeObservation]:
    """Edge-frame observations of every obstacle face the ego approaches.

    The observation point is the ego's front-bumper centre; for each face of
    the obstacle rectangle whose plane lies ahead of it and toward which the
    ego is moving, the longitudinal/lateral offsets and relative heading are
    expressed in that edge's frame.
    """
    front = vehicle.length - vehicle.rear_overhang
    hx, hy = math.cos(state.theta), math.sin(state.theta)
    px = state.x + front * hx
    py = state.y + front * hy
    corners = track.corners()
    out: List[ObstacleEdgeObservation] = []
    for i in range(4):
        p1 = corners[i]
        p2 = corners[(i + 1) % 4]
        ex, ey = p2[0] - p1[0], p2[1] - p1[1]
        elen = math.hypot(ex, ey)
        if elen <= 0.0:
            continue
        tx, ty = ex / elen, ey / elen
        nx, ny = ty, -tx
        mx, my = 0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])
        rx, ry = px - mx, py - my
        if rx * nx + ry * ny < 0.0:  # make the normal point toward the ego
            nx, ny = -nx, -ny
        x_bar = rx * nx + ry * ny
        if x_bar <= 1e-9:
            continue  # the bumper is on the edge plane already
        approach = -(hx * nx + hy * ny)
        if approach <= 1e-9:
            continue  # moving parallel to or away from this face
        psi = math.atan2(hx * tx + hy * ty, approach)
        y_bar = rx * tx + ry * ty
        out.append(
            ObstacleEdgeObservation(x_bar=x_bar, y_bar=y_bar, psi_bar=psi, w_t=elen)
        )
    return out


def object_collision_probability(
    state: EgoState,
    vehicle: VehicleParams,
    track: ObjectTrack,
    params: CollisionParams,
) -> float:
    """Braking-aware collision probability: worst case over approached faces.

    Faces met at large relative headings fall outside the small-angle regime
    and only push the estimate toward zero, so their warning is silenced.
    """
    best = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for obs in edge_observations(state, vehicle, track):
            p = smoothed_collision_probability(max(state.v, 0.0), obs, params)
            if p > best:
                best = p
    return best


# ---------------------------------------------------------------------------
# scene graph plumbing


@dataclass(frozen=True)
class SceneSnapshot:
    """Resolved conclusions of one planning cycle."""

    ego_lane_index: int
    acceptability: Dict[int, int]  # marking entity id -> 0/1
    risk_levels: Dict[int, str]  # object entity id -> low/medium/high
    crossing_pedestrian: bool
    yield_ids: Tuple[int, ...] = ()  # objects the vehicle must not press past


class SceneContext:
    """Persistent scene graph refreshed once per planning cycle."""

    def __init__(self, scenario: Scenario, ruleset: Optional[RuleSet] = None) -> None:
        self.scenario = scenario
        self.ruleset = ruleset if ruleset is not None else default_rule_set()
        self.graph = SceneGraph(default_ontology())
        g = self.graph
        self.ego_id = g.add_entity("ego", attributes=(("name", "ego"),))
        self.lane_ids: List[int] = []
        for i, lane in enumerate(scenario.lanes):
            attrs = [("lane_index", i), ("width", lane.width)]
            attrs += [(f"poly_c{j}", lane.center[j]) for j in range(4)]
            self.lane_ids.append(g.add_entity("lane", attributes=attrs))
        self.marking_ids: List[int] = []
        for m in scenario.markings:
            attrs = [("lane_marking_type", m.line_type)]
            attrs += [(f"poly_c{j}", m.coefficients[j]) for j in range(4)]
            self.marking_ids.append(g.add_entity("lane-marking", attributes=attrs))
        self.track_ids: Dict[str, int] = {}

    def register_track(self, track: ObjectTrack) -> int:
        type_name = _CLASS_TO_TYPE.get(track.object_class, "artificial-object")
        node = self.graph.add_entity(
            type_name,
            attributes=(
                ("name", track.track_id),
                ("length", track.length),
                ("width", track.width),
                ("height", track.height),
            ),
        )
        self.track_ids[track.track_id] = node
        return node

    def lane_index_at(self, x: float, y: float) -> int:
        best = 0
        best_err = math.inf
        for i, lane in enumerate(self.scenario.lanes):
            err = abs(y - lane.center_at(x))
            if err < best_err:
                best, best_err = i, err
        return best

    def refresh(
        self,
        state: EgoState,
        vehicle: VehicleParams,
        tracks: Sequence[ObjectTrack],
        predictions: Dict[int, np.ndarray],
        probabilities: Dict[str, float],
    ) -> SceneSnapshot:
        """Rewrite dynamic attributes, re-derive relations, apply the rules."""
        g = self.graph
        scenario = self.scenario
        for relation in _DERIVED_RELATIONS:
            g.retract_relations(relation)

        g.set_attribute(self.ego_id, "pos_x", state.x)
        g.set_attribute(self.ego_id, "pos_y", state.y)
        g.set_attribute(self.ego_id, "heading", state.theta)
        g.set_attribute(self.ego_id, "speed", state.v)
        ego_lane_idx = self.lane_index_at(state.x, state.y)
        ego_lane = scenario.lanes[ego_lane_idx]
        g.set_attribute(self.ego_id, "lane_index", ego_lane_idx)
        g.add_relation(
            "is_on", (("physical", self.ego_id), ("road", self.lane_ids[ego_lane_idx]))
        )

        lane_center_here = ego_lane.center_at(state.x)
        for mid, marking in zip(self.marking_ids, scenario.markings):
            side = "left" if marking.y_at(state.x) > lane_center_here else "right"
            g.set_attribute(mid, "side_of_ego_lane", side)

        ecx, ecy = ego_box_center(state, vehicle)
        cos_e, sin_e = math.cos(state.theta), math.sin(state.theta)
        crossing_pedestrian = False
        yield_ids: List[int] = []
        for track in tracks:
            nid = self.track_ids[track.track_id]
            g.set_attribute(nid, "pos_x", track.x)
            g.set_attribute(nid, "pos_y", track.y)
            g.set_attribute(nid, "heading", track.heading)
            g.set_attribute(nid, "speed", track.effective_speed)
            g.set_attribute(nid, "classification_certainty", track.certainty)
            g.set_attribute(nid, "collision_probability", probabilities[track.track_id])
            distance = math.hypot(track.x - ecx, track.y - ecy)
            g.set_attribute(nid, "distance_to_ego", distance)

            ahead = cos_e * (track.x - state.x) + sin_e * (track.y - state.y)
            in_front = ahead > 0.0 and ego_lane.contains(track.x, track.y)
            g.set_attribute(nid, "in_front_of_ego", in_front)

            track_lane = self.lane_index_at(track.x, track.y)
            if track.object_class == "car":
                opposed = math.cos(track.heading - state.theta) < 0.0
                oncoming = (
                    track_lane == ego_lane_idx + 1
                    and opposed
                    and track.effective_speed > 0.1
                )
                g.set_attribute(nid, "is_oncoming", oncoming)
            if track.object_class == "pedestrian":
                poses = predictions[nid]
                crossing = False
                for px, py in zip(poses[:, 0], poses[:, 1]):
                    if any(lane.contains(px, py) for lane in scenario.lanes):
                        crossing = True
                        break
                g.set_attribute(nid, "crossing_road", crossing)
                crossing_pedestrian = crossing_pedestrian or crossing
                if crossing:
                    yield_ids.append(nid)
            if scenario.lanes[track_lane].contains(track.x, track.y):
                g.add_relation(
                    "is_on", (("physical", nid), ("road", self.lane_ids[track_lane]))
                )

        apply_rules(g, self.ruleset)

        acceptability = {
            mid: crossing_acceptability(g, mid).acceptability for mid in self.marking_ids
        }
        risk_levels = {
            nid: risk_level(g, nid).level for nid in self.track_ids.values()
        }
        for nid, level in risk_levels.items():
            if level == "high" and nid not in yield_ids:
                yield_ids.append(nid)
        return SceneSnapshot(
            ego_lane_index=ego_lane_idx,
            acceptability=acceptability,
            risk_levels=risk_levels,
            crossing_pedestrian=crossing_pedestrian,
            yield_ids=tuple(sorted(yield_ids)),
        )

    def trace_lines(self, t: float, snapshot: SceneSnapshot) -> List[str]:
        """Human-readable record of the cycle's resolved conclusions."""
        g = self.graph
        lines = []
        for mid, marking in zip(self.marking_ids, self.scenario.markings):
            conclusion = crossing_acceptability(g, mid)
            side = g.get_attribute(mid, "side_of_ego_lane")
            lines.append(
                f"t={t:.2f} marking id={mid} type={marking.line_type} side={side} "
                f"acceptability={conclusion.acceptability} priority={conclusion.priority}"
            )
        for track_id, nid in sorted(self.track_ids.items()):
            conclusion = risk_level(g, nid)
            prob = g.get_attribute(nid, "collision_probability")
            lines.append(
                f"t={t:.2f} object id={nid} name={track_id} "
                f"risk={conclusion.level} priority={conclusion.priority} "
                f"collision_probability={prob:.6f}"
            )
        return lines


# ---------------------------------------------------------------------------
# simulation configuration, audits, results


@dataclass
class SimConfig:
    """Closed-loop settings around a planner configuration."""

    planner: NmpcConfig = dc_field(default_factory=NmpcConfig)
    plant_step: float = 0.05
    replan_every: int = 3
    mode: str = "perfect"  # "perfect" applies u0; "controller" tracks the plan
    gains: ControllerGains = dc_field(default_factory=ControllerGains)
    certainty: CertaintyModel = dc_field(default_factory=CertaintyModel)
    collision: CollisionParams = dc_field(default_factory=CollisionParams)
    goal_radius: float = 2.0
    standstill_speed: float = 0.3
    braking_threshold: float = 0.05
    record_trace: bool = True
    trace_rules: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("perfect", "controller"):
            raise ValueError("mode must be 'perfect' or 'controller'")
        if self.plant_step <= 0:
            raise ValueError("plant_step must be positive")
        if self.replan_every < 1:
            raise ValueError("replan_every must be at least 1")

    @property
    def cycle_dt(self) -> float:
        return self.plant_step * self.replan_every


@dataclass(frozen=True)
class SolverAudit:
    """Per-cycle solver health record."""

    cycle: int
    t: float
    status: str
    iterations: int
    cost: float
    warm_cost: float
    bound_violation: float
    dynamics_residual: float


@dataclass
class SimTrace:
    """Per-plant-step time series."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    a_cmd: np.ndarray
    omega_cmd: np.ndarray
    lat_acc: np.ndarray
    min_clearance: np.ndarray


@dataclass
class SimResult:
    """Outcome and metrics of one scenario run."""

    scenario_id: str
    mode: str
    seed: int
    goal_reached: bool
    completion_time: float  # nan when the goal was not reached
    sim_time: float
    steps: int
    cycles: int
    collisions: int
    collided_with: Optional[str]
    min_distance: Dict[str, float]
    min_clearance: float
    standstill_distance: float  # inf when the ego never reached standstill
    max_acceleration: float
    min_acceleration: float
    max_abs_lat_acc: float
    braking_median: float  # nan when the run never braked
    lane_departure_steps: int
    deadlocked: bool
    infeasible_cycles: int
    solver_max_residual: float
    solver_max_violation: float
    solver_max_descent_gap: float
    solver_max_iterations: int
    trace: Optional[SimTrace] = None
    audits: List[SolverAudit] = dc_field(default_factory=list)
    rule_trace: List[str] = dc_field(default_factory=list)
    graph_dump: str = ""


def _dynamics_residual(traj: Trajectory, config: NmpcConfig) -> float:
    worst = 0.0
    states, inputs = traj.states, traj.inputs
    for k in range(inputs.shape[0]):
        nxt = step_raw(
            states[k, 0],
            states[k, 1],
            states[k, 2],
            states[k, 3],
            states[k, 4],
            inputs[k, 0],
            inputs[k, 1],
            config.vehicle.wheelbase,
            config.t_s,
        )
        for j in range(5):
            err = abs(states[k + 1, j] - nxt[j])
            if err > worst:
                worst = err
    return worst


#: on-path field value where the progress weight starts shrinking / bottoms out
_GATE_RAMP = (0.5, 1.5)
#: smallest fraction of the terminal progress weight kept during a conflict;
#: the residual pull parks the vehicle where the field fringe balances it
#: instead of letting it drift backwards down the fringe
_GATE_FLOOR = 0.05


def progress_weight_scale(
    fields: RiskFieldSet, reference: Reference, yield_ids: Sequence[int]
) -> float:
    """Fraction of the terminal progress weight kept for one planning cycle.

    ``yield_ids`` names the objects the vehicle must not press past: crossing
    pedestrians and anything escalated to high risk.  When such an object's
    field covers the reference path ahead, keeping full weight on the
    long-range reference would trade safety margin for progress and can make
    threading past the object look cheaper than waiting.  The scale falls
    linearly from one to a small floor as the strongest on-path field value
    crosses the ramp, and recovers once the conflict has cleared.
    """
    gated = set(yield_ids)
    if not gated:
        return 1.0
    peak = 0.0
    for obj in fields.objects:
        if obj.node_id not in gated:
            continue
        for k in range(reference.states.shape[0]):
            value = obj.value(k, reference.states[k, 0], reference.states[k, 1])
            if value > peak:
                peak = value
    lo, hi = _GATE_RAMP
    if peak <= lo:
        return 1.0
    return max(0.0, 1.0 - (peak - lo) / (hi - lo))


def _gated_config(
    base: NmpcConfig,
    fields: RiskFieldSet,
    reference: Reference,
    yield_ids: Sequence[int],
) -> NmpcConfig:
    scale = progress_weight_scale(fields, reference, yield_ids)
    if scale >= 1.0:
        return base
    stage = base.stage_weights.copy()
    terminal = base.terminal_weights.copy()
    stage[3] *= scale
    terminal[3] *= scale
    terminal[0] *= _GATE_FLOOR + (1.0 - _GATE_FLOOR) * scale
    return replace(base, stage_weights=stage, terminal_weights=terminal)


# ---------------------------------------------------------------------------
# the closed loop


def run_scenario(
    scenario: Scenario,
    config: Optional[SimConfig] = None,
    ruleset: Optional[RuleSet] = None,
) -> SimResult:
    """Simulate one scenario to goal, collision, or the duration cap."""
    cfg = config if config is not None else SimConfig()
    planner_cfg = cfg.planner
    vehicle = planner_cfg.vehicle
    bounds = planner_cfg.bounds
    v_lo, v_hi = bounds.state_lower[3], bounds.state_upper[3]
    d_lo, d_hi = bounds.state_lower[4], bounds.state_upper[4]

    tracks = [ObjectTrack.from_actor(actor) for actor in scenario.actors]
    context = SceneContext(scenario, ruleset)
    for track in tracks:
        context.register_track(track)

    state = EgoState(*scenario.ego_start)
    goal_x, goal_y = scenario.goal_point()
    n_steps = max(1, int(round(scenario.duration_cap / cfg.plant_step)))

    trajectory: Optional[Trajectory] = None
    planned: Optional[Trajectory] = None
    command = EgoInput(0.0, 0.0)
    snapshot: Optional[SceneSnapshot] = None
    substep = 0
    cycle_count = 0
    prev_lat_error = 0.0

    audits: List[SolverAudit] = []
    rule_trace: List[str] = []
    trace_rows: List[Tuple[float, ...]] = []

    goal_reached = False
    completion_time = math.nan
    collided_with: Optional[str] = None
    min_distance = {track.track_id: math.inf for track in tracks}
    min_clearance = math.inf
    standstill_distance = math.inf
    has_moved = False
    max_acc = -math.inf
    min_acc = math.inf
    max_abs_lat = 0.0
    braking: List[float] = []
    lane_departures = 0
    infeasible = 0
    max_residual = 0.0
    max_violation = 0.0
    max_descent_gap = -math.inf
    max_iters = 0

    ego_lane = scenario.ego_lane
    t_end = 0.0
    steps_run = 0

    for step_idx in range(n_steps):
        t = step_idx * cfg.plant_step

        if step_idx % cfg.replan_every == 0:
            ecx, ecy = ego_box_center(state, vehicle)
            predictions: Dict[int, np.ndarray] = {}
            probabilities: Dict[str, float] = {}
            for track in tracks:
                distance = math.hypot(track.x - ecx, track.y - ecy)
                if (
                    not track.moving
                    and track.trigger_distance is not None
                    and distance <= track.trigger_distance
                ):
                    track.moving = True
                update_certainty(track, distance, cfg.cycle_dt, cfg.certainty)
                predictions[context.track_ids[track.track_id]] = (
                    predict_constant_velocity(track, planner_cfg.horizon, planner_cfg.t_s)
                )
                probabilities[track.track_id] = object_collision_probability(
                    state, vehicle, track, cfg.collision
                )
            snapshot = context.refresh(state, vehicle, tracks, predictions, probabilities)
            fields = build_risk_fields(context.graph, predictions)
            reference = build_reference(
                state, ego_lane.center, scenario.speed_limit, planner_cfg
            )
            warm = (
                shift_warm_start(trajectory, planner_cfg)
                if trajectory is not None
                else None
            )
            cycle_cfg = _gated_config(
                planner_cfg, fields, reference, snapshot.yield_ids
            )
            trajectory = solve(state, reference, fields, cycle_cfg, warm)
            if (
                cycle_cfg is not planner_cfg
                and trajectory.status is not SolveStatus.INFEASIBLE_START
            ):
                alt = solve(
                    state,
                    reference,
                    fields,
                    cycle_cfg,
                    braking_seed(state, cycle_cfg),
                )
                if alt.cost < trajectory.cost:
                    trajectory = alt
            cycle_count += 1
            residual = _dynamics_residual(trajectory, planner_cfg)
            audits.append(
                SolverAudit(
                    cycle=cycle_count,
                    t=t,
                    status=trajectory.status.value,
                    iterations=trajectory.iterations,
                    cost=trajectory.cost,
                    warm_cost=trajectory.initial_cost,
                    bound_violation=trajectory.max_bound_violation,
                    dynamics_residual=residual,
                )
            )
            max_residual = max(max_residual, residual)
            max_violation = max(max_violation, trajectory.max_bound_violation)
            max_iters = max(max_iters, trajectory.iterations)
            if math.isfinite(trajectory.initial_cost):
                max_descent_gap = max(
                    max_descent_gap, trajectory.cost - trajectory.initial_cost
                )
            if cfg.trace_rules:
                rule_trace.extend(context.trace_lines(t, snapshot))
            if trajectory.status is SolveStatus.INFEASIBLE_START:
                infeasible += 1
                planned = None
                command = EgoInput(bounds.input_lower[0], 0.0)  # full braking
            else:
                planned = trajectory
                command = trajectory.first_input()
            substep = 0
            prev_lat_error = 0.0

        if cfg.mode == "controller" and planned is not None:
            frac = (substep + 1) * cfg.plant_step / planner_cfg.t_s
            frac = min(frac, 1.0)
            v_plan = (1.0 - frac) * planned.states[0, 3] + frac * planned.states[1, 3]
            y_plan = (1.0 - frac) * planned.states[0, 1] + frac * planned.states[1, 1]
            lat_error = y_plan - state.y
            lat_rate = (lat_error - prev_lat_error) / cfg.plant_step if substep else 0.0
            prev_lat_error = lat_error
            command = EgoInput(
                longitudinal_controller(state.v, v_plan, cfg.gains, bounds),
                lateral_controller(lat_error, lat_rate, cfg.gains, bounds),
            )

        nx, ny, nth, nv, nd = step_raw(
            state.x,
            state.y,
            state.theta,
            state.v,
            state.delta,
            command.a,
            command.omega,
            vehicle.wheelbase,
            cfg.plant_step,
        )
        # actuator saturation keeps the plant inside the operating envelope
        nv = min(max(nv, v_lo), v_hi)
        nd = min(max(nd, d_lo), d_hi)
        state = EgoState(nx, ny, nth, nv, nd)
        substep += 1
        for track in tracks:
            track.advance(cfg.plant_step)
        t_end = t + cfg.plant_step
        steps_run += 1

        ego_poly = ego_corners(state, vehicle)
        step_clearance = math.inf
        for track in tracks:
            track_poly = track.corners()
            if polygons_overlap(ego_poly, track_poly):
                collided_with = track.track_id
                min_distance[track.track_id] = 0.0
                step_clearance = 0.0
                break
            dist = polygon_distance(ego_poly, track_poly)
            if dist < min_distance[track.track_id]:
                min_distance[track.track_id] = dist
            if dist < step_clearance:
                step_clearance = dist
        min_clearance = min(min_clearance, step_clearance)

        lat_acc = state.v * state.v * math.tan(state.delta) / vehicle.wheelbase
        max_abs_lat = max(max_abs_lat, abs(lat_acc))
        max_acc = max(max_acc, command.a)
        min_acc = min(min_acc, command.a)
        if command.a < -cfg.braking_threshold:
            braking.append(-command.a)
        if state.v >= cfg.standstill_speed:
            has_moved = True
        elif has_moved and tracks:
            # standstill clearance counts only stops made after setting off,
            # not the initial standstill every run begins in
            standstill_distance = min(standstill_distance, step_clearance)
        if (
            snapshot is not None
            and snapshot.crossing_pedestrian
            and abs(state.y - ego_lane.center_at(state.x)) > 0.5 * ego_lane.width
        ):
            lane_departures += 1

        if cfg.record_trace:
            trace_rows.append(
                (
                    t_end,
                    state.x,
                    state.y,
                    state.theta,
                    state.v,
                    state.delta,
                    command.a,
                    command.omega,
                    lat_acc,
                    step_clearance,
                )
            )

        if collided_with is not None:
            break
        if math.hypot(state.x - goal_x, state.y - goal_y) <= cfg.goal_radius:
            goal_reached = True
            completion_time = t_end
            break

    deadlocked = (
        not goal_reached and collided_with is None and state.v < cfg.standstill_speed
    )

    trace = None
    if cfg.record_trace and trace_rows:
        cols = np.array(trace_rows, dtype=float).T
        trace = SimTrace(*cols)

    result = SimResult(
        scenario_id=scenario.scenario_id,
        mode=cfg.mode,
        seed=scenario.seed,
        goal_reached=goal_reached,
        completion_time=completion_time,
        sim_time=t_end,
        steps=steps_run,
        cycles=cycle_count,
        collisions=0 if collided_with is None else 1,
        collided_with=collided_with,
        min_distance=min_distance,
        min_clearance=min_clearance,
        standstill_distance=standstill_distance,
        max_acceleration=max_acc if math.isfinite(max_acc) else 0.0,
        min_acceleration=min_acc if math.isfinite(min_acc) else 0.0,
        max_abs_lat_acc=max_abs_lat,
        braking_median=median(braking) if braking else math.nan,
        lane_departure_steps=lane_departures,
        deadlocked=deadlocked,
        infeasible_cycles=infeasible,
        solver_max_residual=max_residual,
        solver_max_violation=max_violation,
        solver_max_descent_gap=(
            max_descent_gap if math.isfinite(max_descent_gap) else 0.0
        ),
        solver_max_iterations=max_iters,
        trace=trace,
        audits=audits,
        rule_trace=rule_trace,
        graph_dump=context.graph.dump(),
    )
    return result


# ---------------------------------------------------------------------------
# batches


def _run_indexed(args: Tuple[int, Scenario, SimConfig]) -> Tuple[int, SimResult]:
    index, scenario, config = args
    return index, run_scenario(scenario, config)


def run_batch(
    scenarios: Sequence[Scenario],
    config: Optional[SimConfig] = None,
    parallel: int = 1,
) -> List[SimResult]:
    """Run scenarios independently, preserving input order in the output."""
    cfg = config if config is not None else SimConfig()
    jobs = [(i, scenario, cfg) for i, scenario in enumerate(scenarios)]
    if parallel > 1 and len(jobs) > 1:
        import multiprocessing

        with multiprocessing.Pool(processes=parallel) as pool:
            indexed = pool.map(_run_indexed, jobs)
    else:
        indexed = [_run_indexed(job) for job in jobs]
    indexed.sort(key=lambda pair: pair[0])
    return [result for _, result in indexed]


def field_snapshot(
    scenario: Scenario,
    config: Optional[SimConfig] = None,
    cycle: int = 0,
) -> Tuple[RiskFieldSet, EgoState, List[ObjectTrack]]:
    """Replay a scenario up to a planning cycle and return its risk fields.

    ``cycle`` 0 is the first plan of the run.  The replay is the exact
    closed-loop simulation, so the snapshot matches what the planner saw.
    """
    cfg = config if config is not None else SimConfig()
    planner_cfg = cfg.planner
    vehicle = planner_cfg.vehicle
    bounds = planner_cfg.bounds
    v_lo, v_hi = bounds.state_lower[3], bounds.state_upper[3]
    d_lo, d_hi = bounds.state_lower[4], bounds.state_upper[4]

    tracks = [ObjectTrack.from_actor(actor) for actor in scenario.actors]
    context = SceneContext(scenario)
    for track in tracks:
        context.register_track(track)
    state = EgoState(*scenario.ego_start)
    trajectory: Optional[Trajectory] = None
    command = EgoInput(0.0, 0.0)
    n_steps = max(1, int(round(scenario.duration_cap / cfg.plant_step)))
    cycle_index = -1

    for step_idx in range(n_steps):
        if step_idx % cfg.replan_every == 0:
            ecx, ecy = ego_box_center(state, vehicle)
            predictions: Dict[int, np.ndarray] = {}
            probabilities: Dict[str, float] = {}
            for track in tracks:
                distance = math.hypot(track.x - ecx, track.y - ecy)
                if (
                    not track.moving
                    and track.trigger_distance is not None
                    and distance <= track.trigger_distance
                ):
                    track.moving = True
                update_certainty(track, distance, cfg.cycle_dt, cfg.certainty)
                predictions[context.track_ids[track.track_id]] = (
                    predict_constant_velocity(track, planner_cfg.horizon, planner_cfg.t_s)
                )
                probabilities[track.track_id] = object_collision_probability(
                    state, vehicle, track, cfg.collision
                )
            snapshot = context.refresh(
                state, vehicle, tracks, predictions, probabilities
            )
            fields = build_risk_fields(context.graph, predictions)
            cycle_index += 1
            if cycle_index >= cycle:
                return fields, state, tracks
            reference = build_reference(
                state, scenario.ego_lane.center, scenario.speed_limit, planner_cfg
            )
            warm = (
                shift_warm_start(trajectory, planner_cfg)
                if trajectory is not None
                else None
            )
            cycle_cfg = _gated_config(
                planner_cfg, fields, reference, snapshot.yield_ids
            )
            trajectory = solve(state, reference, fields, cycle_cfg, warm)
            if (
                cycle_cfg is not planner_cfg
                and trajectory.status is not SolveStatus.INFEASIBLE_START
            ):
                alt = solve(
                    state,
                    reference,
                    fields,
                    cycle_cfg,
                    braking_seed(state, cycle_cfg),
                )
                if alt.cost < trajectory.cost:
                    trajectory = alt
            if trajectory.status is SolveStatus.INFEASIBLE_START:
                command = EgoInput(bounds.input_lower[0], 0.0)
            else:
                command = trajectory.first_input()
        nx, ny, nth, nv, nd = step_raw(
            state.x,
            state.y,
            state.theta,
            state.v,
            state.delta,
            command.a,
            command.omega,
            vehicle.wheelbase,
            cfg.plant_step,
        )
        nv = min(max(nv, v_lo), v_hi)
        nd = min(max(nd, d_lo), d_hi)
        state = EgoState(nx, ny, nth, nv, nd)
        for track in tracks:
            track.advance(cfg.plant_step)
    raise ValueError(
        f"scenario ended before planning cycle {cycle} (ran {cycle_index + 1} cycles)"
    )


__all__ = [
    "CertaintyModel",
    "ControllerGains",
    "ObjectTrack",
    "SceneContext",
    "SceneSnapshot",
    "SimConfig",
    "SimResult",
    "SimTrace",
    "SolverAudit",
    "edge_observations",
    "ego_box_center",
    "ego_corners",
    "field_snapshot",
    "lateral_controller",
    "longitudinal_controller",
    "object_collision_probability",
    "predict_constant_velocity",
    "run_batch",
    "run_scenario",
    "update_certainty",
]
