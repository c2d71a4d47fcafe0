"""Forward-chaining prioritized default rules over a scene graph.

A rule matches a conjunctive body pattern and inserts a head relation with a
``priority`` attribute equal to the rule priority.  Rules are applied in
ascending priority order until a fixpoint; conclusions are deduplicated, so
re-application is idempotent.  Higher-priority conclusions override lower
ones at query time through the graph's priority resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Tuple

from .graph import AttrCmp, Pattern, SceneGraph, TypeIs

MAX_SWEEPS = 100

# thresholds used by the default rule set
OBJECT_AHEAD_DISTANCE = 20.0
ONCOMING_DISTANCE = 50.0
SMALL_OBJECT_CERTAINTY = 0.8
SMALL_OBJECT_SIZE = 0.4
VRU_CERTAINTY = 0.05
VRU_COLLISION_PROBABILITY = 0.05
HIGH_COLLISION_PROBABILITY = 0.2

RISK_LEVELS = ("low", "medium", "high")


class RuleError(ValueError):
    """Ill-formed rule definition."""


class FixpointError(RuntimeError):
    """Rule application failed to reach a fixpoint within the sweep cap."""


class MissingConclusionError(LookupError):
    """No conclusion of the requested kind exists at the anchor node."""


@dataclass(frozen=True)
class RuleHead:
    """Relation to insert: role name -> body variable, plus fixed attributes."""

    relation_type: str
    roles: Tuple[Tuple[str, str], ...]
    attributes: Tuple[Tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class Rule:
    name: str
    priority: int
    body: tuple
    head: RuleHead

    def __init__(self, name: str, priority: int, body: Pattern, head: RuleHead):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "priority", int(priority))
        object.__setattr__(self, "body", tuple(body))
        object.__setattr__(self, "head", head)
        if self.priority < 0:
            raise RuleError("rule priority must be non-negative")
        positive_vars = {c.var for c in self.body if isinstance(c, TypeIs)}
        for _, var in head.roles:
            if var not in positive_vars:
                raise RuleError(
                    f"rule {name!r}: head variable {var!r} is not bound by a "
                    f"positive body conjunct"
                )
        for attr_name, _ in head.attributes:
            if attr_name == "priority":
                raise RuleError("the priority attribute is set from the rule priority")


@dataclass(frozen=True)
class RuleSet:
    rules: Tuple[Rule, ...]

    def __init__(self, rules) -> None:
        rules = tuple(rules)
        names = [r.name for r in rules]
        if len(set(names)) != len(names):
            raise RuleError("rule names must be unique")
        object.__setattr__(self, "rules", rules)

    def by_priority(self) -> Tuple[Rule, ...]:
        return tuple(sorted(self.rules, key=lambda r: r.priority))


def apply_rules(graph: SceneGraph, ruleset: RuleSet) -> int:
    """Apply every rule to fixpoint in ascending priority order.

    Returns the number of relations inserted.  Each (rule, head) instance is
    inserted at most once, so calling this again on an unchanged graph
    inserts nothing.  More than ``MAX_SWEEPS`` sweeps raises FixpointError.
    """
    ordered = ruleset.by_priority()
    total = 0
    for _ in range(MAX_SWEEPS):
        inserted = 0
        for rule in ordered:
            for binding in graph.match(rule.body):
                roles = {role: binding[var] for role, var in rule.head.roles}
                attrs = dict(rule.head.attributes)
                attrs["priority"] = rule.priority
                if not graph.has_relation(rule.head.relation_type, roles, attrs):
                    graph.add_relation(
                        rule.head.relation_type,
                        sorted(roles.items()),
                        sorted(attrs.items()),
                    )
                    inserted += 1
        total += inserted
        if inserted == 0:
            return total
    raise FixpointError(f"no fixpoint after {MAX_SWEEPS} sweeps")


@dataclass(frozen=True)
class AcceptabilityConclusion:
    acceptability: int
    priority: int
    relation_id: int


@dataclass(frozen=True)
class RiskConclusion:
    level: str
    priority: int
    relation_id: int


def crossing_acceptability(graph: SceneGraph, marking_id: int) -> AcceptabilityConclusion:
    """Resolved crossing acceptability of a lane marking.

    The rule set must have produced at least one conclusion for the marking;
    a missing conclusion signals an incompletely built scene and raises.
    """
    resolved = graph.highest_priority_relation("crossing_acceptability", marking_id)
    if resolved is None:
        raise MissingConclusionError(
            f"no crossing_acceptability conclusion at node {marking_id}"
        )
    rid, attrs = resolved
    return AcceptabilityConclusion(
        acceptability=int(attrs["acceptability"]),
        priority=int(attrs["priority"]),
        relation_id=rid,
    )


def risk_level(graph: SceneGraph, object_id: int) -> RiskConclusion:
    """Resolved risk level of an object (low, medium or high)."""
    resolved = graph.highest_priority_relation("has_risk_level", object_id)
    if resolved is None:
        raise MissingConclusionError(f"no has_risk_level conclusion at node {object_id}")
    rid, attrs = resolved
    return RiskConclusion(
        level=str(attrs["risk_level"]),
        priority=int(attrs["priority"]),
        relation_id=rid,
    )


def default_rule_set() -> RuleSet:
    """Crossing-acceptability and risk-level defaults.

    Crossing a marking (higher priority wins):

    * 0: a dashed line may be crossed
    * 0: a solid line may not be crossed
    * 1: a dashed line on the left side of the ego lane may not be crossed
    * 2: ... unless an object blocks the lane ahead within 20 m
    * 3: ... but not while an oncoming vehicle on the left lane is within 50 m
    * 4: no dashed line may be crossed while a pedestrian is crossing the road

    Object risk:

    * 0: any object carries medium risk
    * 1: a confidently classified artificial object small in every dimension
         carries low risk
    * 2: a pedestrian on a plausible collision course carries high risk
    * 3: any object with a high collision probability carries high risk
    """
    dashed = AttrCmp("m", "lane_marking_type", "=", "dashed")
    solid = AttrCmp("m", "lane_marking_type", "=", "solid")
    left = AttrCmp("m", "side_of_ego_lane", "=", "left")
    marking = TypeIs("m", "lane-marking")
    ego = TypeIs("e", "ego")
    accept_head = lambda value: RuleHead(  # noqa: E731 - local shorthand
        "crossing_acceptability",
        (("lane_marking", "m"), ("ego", "e")),
        (("acceptability", value),),
    )
    risk_head = lambda level: RuleHead(  # noqa: E731
        "has_risk_level", (("object", "o"),), (("risk_level", level),)
    )
    crossing_rules = (
        Rule("dashed-crossable", 0, (marking, ego, dashed), accept_head(1)),
        Rule("solid-not-crossable", 0, (marking, ego, solid), accept_head(0)),
        Rule(
            "keep-right-of-left-dashed",
            1,
            (marking, ego, dashed, left),
            accept_head(0),
        ),
        Rule(
            "overtake-blocked-lane",
            2,
            (
                marking,
                ego,
                dashed,
                left,
                TypeIs("o", "object"),
                AttrCmp("o", "in_front_of_ego", "=", True),
                AttrCmp("o", "distance_to_ego", "<", OBJECT_AHEAD_DISTANCE),
            ),
            accept_head(1),
        ),
        Rule(
            "yield-to-oncoming",
            3,
            (
                marking,
                ego,
                dashed,
                left,
                TypeIs("o", "vehicle"),
                AttrCmp("o", "is_oncoming", "=", True),
                AttrCmp("o", "distance_to_ego", "<", ONCOMING_DISTANCE),
            ),
            accept_head(0),
        ),
        Rule(
            "hold-lane-for-crossing-pedestrian",
            4,
            (
                marking,
                ego,
                dashed,
                TypeIs("p", "pedestrian"),
                AttrCmp("p", "crossing_road", "=", True),
            ),
            accept_head(0),
        ),
    )
    risk_rules = (
        Rule("object-default-medium", 0, (TypeIs("o", "object"),), risk_head("medium")),
        Rule(
            "small-artificial-object-low",
            1,
            (
                TypeIs("o", "artificial-object"),
                AttrCmp("o", "classification_certainty", ">", SMALL_OBJECT_CERTAINTY),
                AttrCmp("o", "length", "<", SMALL_OBJECT_SIZE),
                AttrCmp("o", "width", "<", SMALL_OBJECT_SIZE),
                AttrCmp("o", "height", "<", SMALL_OBJECT_SIZE),
            ),
            risk_head("low"),
        ),
        Rule(
            "pedestrian-collision-course-high",
            2,
            (
                TypeIs("o", "pedestrian"),
                AttrCmp("o", "classification_certainty", ">", VRU_CERTAINTY),
                AttrCmp("o", "collision_probability", ">", VRU_COLLISION_PROBABILITY),
            ),
            risk_head("high"),
        ),
        Rule(
            "collision-probability-high",
            3,
            (
                TypeIs("o", "object"),
                AttrCmp("o", "collision_probability", ">", HIGH_COLLISION_PROBABILITY),
            ),
            risk_head("high"),
        ),
    )
    return RuleSet(crossing_rules + risk_rules)


__all__ = [
    "AcceptabilityConclusion",
    "FixpointError",
    "MissingConclusionError",
    "RiskConclusion",
    "Rule",
    "RuleError",
    "RuleHead",
    "RuleSet",
    "apply_rules",
    "crossing_acceptability",
    "default_rule_set",
    "risk_level",
    "MAX_SWEEPS",
]
