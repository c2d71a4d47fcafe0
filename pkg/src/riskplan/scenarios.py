"""Scenario descriptions: road layout, actors, goal, and builtin families.

Roads are straight two-lane two-way carriageways along +x described by cubic
centerline polynomials; the ego starts from standstill at the origin of the
rightmost lane.  Four builtin families cover the supported use cases:

* ``a`` - a static obstacle in the ego lane (parked car, glass bin or
  cardboard box at 20/30/40 m), 9 variations;
* ``b`` - the same 9 obstacle cases combined with an oncoming vehicle on the
  left lane (start 40/60/80/100 m, speed 5.5/7.5/11 m/s), 108 variations;
* ``c`` - a pedestrian crossing from the left (96 variations over start
  position, heading and walking speed);
* ``d`` - the mirror image of ``c``, crossing from the right (96 variations).

Pedestrians stand on the sidewalk until the ego closes within their
trigger distance, then cross at constant velocity; other moving actors
travel from the first time step.

Custom scenarios load from JSON files with the same fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

LANE_WIDTH = 3.5
SPEED_LIMIT = 9.0
GOAL_DISTANCE = 160.0

OBJECT_CLASSES = ("car", "pedestrian", "artificial_object")
LINE_TYPES = ("solid", "dashed")


class ScenarioError(ValueError):
    """Invalid scenario description."""


@dataclass(frozen=True)
class LaneSpec:
    """Lane centerline polynomial (ascending powers of x) and width."""

    center: Tuple[float, float, float, float]
    width: float = LANE_WIDTH

    def center_at(self, x: float) -> float:
        c0, c1, c2, c3 = self.center
        return c0 + x * (c1 + x * (c2 + x * c3))

    def contains(self, x: float, y: float) -> bool:
        return abs(y - self.center_at(x)) <= 0.5 * self.width


@dataclass(frozen=True)
class MarkingSpec:
    """Lane marking polynomial and line type."""

    line_type: str
    coefficients: Tuple[float, float, float, float]

    def y_at(self, x: float) -> float:
        c0, c1, c2, c3 = self.coefficients
        return c0 + x * (c1 + x * (c2 + x * c3))


@dataclass(frozen=True)
class ActorSpec:
    """A scripted traffic participant moving at constant velocity.

    ``trigger_distance`` keeps the actor standing until the ego gets that
    close; ``None`` means it moves from the first time step.
    """

    actor_id: str
    object_class: str
    x: float
    y: float
    heading: float = 0.0
    speed: float = 0.0
    length: float = 1.0
    width: float = 1.0
    height: float = 1.0
    trigger_distance: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    lanes: Tuple[LaneSpec, ...]
    markings: Tuple[MarkingSpec, ...]
    actors: Tuple[ActorSpec, ...]
    goal_distance: float
    duration_cap: float
    speed_limit: float = SPEED_LIMIT
    seed: int = 0
    ego_start: Tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def ego_lane(self) -> LaneSpec:
        return self.lanes[0]

    def goal_point(self) -> Tuple[float, float]:
        x0 = self.ego_start[0]
        gx = x0 + self.goal_distance
        return gx, self.ego_lane.center_at(gx)


def two_lane_road() -> Tuple[Tuple[LaneSpec, ...], Tuple[MarkingSpec, ...]]:
    """Rightmost (ego) lane centered on y=0, oncoming lane to its left,
    solid outer markings and a dashed center line."""
    half = 0.5 * LANE_WIDTH
    lanes = (
        LaneSpec((0.0, 0.0, 0.0, 0.0)),
        LaneSpec((LANE_WIDTH, 0.0, 0.0, 0.0)),
    )
    markings = (
        MarkingSpec("solid", (-half, 0.0, 0.0, 0.0)),
        MarkingSpec("dashed", (half, 0.0, 0.0, 0.0)),
        MarkingSpec("solid", (LANE_WIDTH + half, 0.0, 0.0, 0.0)),
    )
    return lanes, markings


#: static obstacles for family a: (label, class, lateral position, l, w, h)
_OBSTACLE_TYPES = (
    ("car", "car", -3.4, 4.5, 1.9, 1.5),
    ("bin", "artificial_object", -2.35, 0.8, 0.8, 1.2),
    ("box", "artificial_object", -1.8, 0.45, 0.45, 0.45),
)
_OBSTACLE_POSITIONS = (20.0, 30.0, 40.0)

_ONCOMING_STARTS = (40.0, 60.0, 80.0)
_ONCOMING_SPEEDS = (5.5, 7.5, 9.5, 11.0)

_PEDESTRIAN_LATERAL = (3.0, 4.0)
_PEDESTRIAN_LONGITUDINAL = (25.0, 35.0, 45.0, 55.0)
_PEDESTRIAN_HEADINGS_DEG = (80.0, 90.0, 100.0)
_PEDESTRIAN_SPEEDS = (1.0, 1.4, 1.8, 2.2)
_PEDESTRIAN_TRIGGER = 25.0


def _static_obstacle(label: str, position: float) -> ActorSpec:
    for name, cls, lateral, length, width, height in _OBSTACLE_TYPES:
        if name == label:
            return ActorSpec(
                actor_id=name,
                object_class=cls,
                x=position,
                y=lateral,
                heading=0.0,
                speed=0.0,
                length=length,
                width=width,
                height=height,
            )
    raise ScenarioError(f"unknown obstacle label {label!r}")


def family_a() -> List[Scenario]:
    lanes, markings = two_lane_road()
    out = []
    for label, *_ in _OBSTACLE_TYPES:
        for position in _OBSTACLE_POSITIONS:
            out.append(
                Scenario(
                    scenario_id=f"a-{label}-x{position:g}",
                    lanes=lanes,
                    markings=markings,
                    actors=(_static_obstacle(label, position),),
                    goal_distance=GOAL_DISTANCE,
                    duration_cap=40.0,
                )
            )
    return out


def family_b() -> List[Scenario]:
    lanes, markings = two_lane_road()
    out = []
    for label, *_ in _OBSTACLE_TYPES:
        for position in _OBSTACLE_POSITIONS:
            for start in _ONCOMING_STARTS:
                for speed in _ONCOMING_SPEEDS:
                    oncoming = ActorSpec(
                        actor_id="oncoming",
                        object_class="car",
                        x=start,
                        y=LANE_WIDTH,
                        heading=math.pi,
                        speed=speed,
                        length=4.5,
                        width=1.9,
                        height=1.5,
                    )
                    out.append(
                        Scenario(
                            scenario_id=(
                                f"b-{label}-x{position:g}-o{start:g}-v{speed:g}"
                            ),
                            lanes=lanes,
                            markings=markings,
                            actors=(_static_obstacle(label, position), oncoming),
                            goal_distance=GOAL_DISTANCE,
                            duration_cap=60.0,
                        )
                    )
    return out


def _pedestrian_family(key: str, from_left: bool) -> List[Scenario]:
    lanes, markings = two_lane_road()
    out = []
    side = 1.0 if from_left else -1.0
    for lateral in _PEDESTRIAN_LATERAL:
        for longitudinal in _PEDESTRIAN_LONGITUDINAL:
            for heading_deg in _PEDESTRIAN_HEADINGS_DEG:
                for speed in _PEDESTRIAN_SPEEDS:
                    # headings point toward the road from the start side
                    heading = (
                        math.radians(-heading_deg)
                        if from_left
                        else math.radians(heading_deg)
                    )
                    actor = ActorSpec(
                        actor_id="pedestrian",
                        object_class="pedestrian",
                        x=longitudinal,
                        y=side * lateral,
                        heading=heading,
                        speed=speed,
                        length=0.5,
                        width=0.5,
                        height=1.8,
                        trigger_distance=_PEDESTRIAN_TRIGGER,
                    )
                    out.append(
                        Scenario(
                            scenario_id=(
                                f"{key}-y{side * lateral:g}-x{longitudinal:g}"
                                f"-h{heading_deg:g}-s{speed:g}"
                            ),
                            lanes=lanes,
                            markings=markings,
                            actors=(actor,),
                            goal_distance=GOAL_DISTANCE,
                            duration_cap=45.0,
                        )
                    )
    return out


def family_c() -> List[Scenario]:
    """Pedestrian crossing from the left (heading around -90 degrees)."""
    return _pedestrian_family("c", from_left=True)


def family_d() -> List[Scenario]:
    """Pedestrian crossing from the right (heading around +90 degrees)."""
    return _pedestrian_family("d", from_left=False)


BUILTIN_FAMILIES = ("a", "b", "c", "d")


def builtin_family(name: str) -> List[Scenario]:
    """All variations of a builtin family ('a'..'d', or 'builtin:a')."""
    key = name.split(":", 1)[1] if name.startswith("builtin:") else name
    factory = {"a": family_a, "b": family_b, "c": family_c, "d": family_d}.get(key)
    if factory is None:
        raise ScenarioError(
            f"unknown builtin family {name!r}; expected one of {BUILTIN_FAMILIES}"
        )
    return factory()


# -- JSON round trip -------------------------------------------------------


def _require(data: Dict, key: str, kind, where: str):
    if key not in data:
        raise ScenarioError(f"{where}: missing field {key!r}")
    value = data[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ScenarioError(f"{where}: field {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind):
        raise ScenarioError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def _coeffs(raw, where: str) -> Tuple[float, float, float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ScenarioError(f"{where}: expected 4 polynomial coefficients")
    try:
        return tuple(float(c) for c in raw)  # type: ignore[return-value]
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: coefficients must be numbers") from None


def scenario_from_dict(data: Dict, default_id: str = "custom") -> List[Scenario]:
    """Validate a scenario dictionary; one scenario per listed seed."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a JSON object")
    sid = str(data.get("id", default_id))
    lanes_raw = _require(data, "lanes", list, sid)
    if not lanes_raw:
        raise ScenarioError(f"{sid}: at least one lane is required")
    lanes = tuple(
        LaneSpec(
            center=_coeffs(_require(lane, "center", list, f"{sid}.lanes[{i}]"), f"{sid}.lanes[{i}]"),
            width=float(lane.get("width", LANE_WIDTH)),
        )
        for i, lane in enumerate(lanes_raw)
    )
    markings_raw = _require(data, "markings", list, sid)
    markings = []
    for i, m in enumerate(markings_raw):
        where = f"{sid}.markings[{i}]"
        line_type = _require(m, "type", str, where)
        if line_type not in LINE_TYPES:
            raise ScenarioError(f"{where}: type must be one of {LINE_TYPES}")
        markings.append(
            MarkingSpec(line_type, _coeffs(_require(m, "coefficients", list, where), where))
        )
    actors = []
    for i, a in enumerate(data.get("actors", [])):
        where = f"{sid}.actors[{i}]"
        cls = _require(a, "class", str, where)
        if cls not in OBJECT_CLASSES:
            raise ScenarioError(f"{where}: class must be one of {OBJECT_CLASSES}")
        trigger = a.get("trigger_distance")
        if trigger is not None and (
            not isinstance(trigger, (int, float)) or isinstance(trigger, bool)
        ):
            raise ScenarioError(f"{where}: trigger_distance must be a number")
        actors.append(
            ActorSpec(
                actor_id=str(a.get("id", f"actor{i}")),
                object_class=cls,
                x=_require(a, "x", float, where),
                y=_require(a, "y", float, where),
                heading=float(a.get("heading", 0.0)),
                speed=float(a.get("speed", 0.0)),
                length=float(a.get("length", 1.0)),
                width=float(a.get("width", 1.0)),
                height=float(a.get("height", 1.0)),
                trigger_distance=None if trigger is None else float(trigger),
            )
        )
        if actors[-1].length <= 0 or actors[-1].width <= 0:
            raise ScenarioError(f"{where}: length and width must be positive")
    goal_distance = _require(data, "goal_distance", float, sid)
    if goal_distance <= 0:
        raise ScenarioError(f"{sid}: goal_distance must be positive")
    duration_cap = _require(data, "duration_cap", float, sid)
    if duration_cap <= 0:
        raise ScenarioError(f"{sid}: duration_cap must be positive")
    seeds = data.get("seeds", [int(data.get("seed", 0))])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    ):
        raise ScenarioError(f"{sid}: seeds must be a non-empty list of integers")
    ego_start = data.get("ego_start", (0.0, 0.0, 0.0, 0.0, 0.0))
    if not isinstance(ego_start, (list, tuple)) or len(ego_start) != 5:
        raise ScenarioError(f"{sid}: ego_start must have 5 components")
    out = []
    for seed in seeds:
        suffix = f"-seed{seed}" if len(seeds) > 1 else ""
        out.append(
            Scenario(
                scenario_id=sid + suffix,
                lanes=lanes,
                markings=tuple(markings),
                actors=tuple(actors),
                goal_distance=goal_distance,
                duration_cap=duration_cap,
                speed_limit=float(data.get("speed_limit", SPEED_LIMIT)),
                seed=int(seed),
                ego_start=tuple(float(c) for c in ego_start),
            )
        )
    return out


def scenario_to_dict(scenario: Scenario) -> Dict:
    return {
        "id": scenario.scenario_id,
        "lanes": [
            {"center": list(lane.center), "width": lane.width} for lane in scenario.lanes
        ],
        "markings": [
            {"type": m.line_type, "coefficients": list(m.coefficients)}
            for m in scenario.markings
        ],
        "actors": [
            {
                "id": a.actor_id,
                "class": a.object_class,
                "x": a.x,
                "y": a.y,
                "heading": a.heading,
                "speed": a.speed,
                "length": a.length,
                "width": a.width,
                "height": a.height,
                **(
                    {}
                    if a.trigger_distance is None
                    else {"trigger_distance": a.trigger_distance}
                ),
            }
            for a in scenario.actors
        ],
        "goal_distance": scenario.goal_distance,
        "duration_cap": scenario.duration_cap,
        "speed_limit": scenario.speed_limit,
        "seeds": [scenario.seed],
        "ego_start": list(scenario.ego_start),
    }


def load_scenarios(path: str) -> List[Scenario]:
    """Load one scenario file (one scenario per seed listed in it)."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from None
    return scenario_from_dict(data)


def resolve_scenarios(spec: str) -> List[Scenario]:
    """Builtin family reference ('builtin:a') or path to a JSON file."""
    if spec.startswith("builtin:"):
        return builtin_family(spec)
    if spec in BUILTIN_FAMILIES:
        return builtin_family(spec)
    return load_scenarios(spec)
