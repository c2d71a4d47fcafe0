"""Context-aware trajectory planning with rule-derived risk fields.

The package couples a typed scene graph with forward-chaining traffic rules,
turns the conclusions into Gaussian risk fields, and plans over them with a
quasi-Newton nonlinear model-predictive controller.  A closed-loop simulator
and a reporting module reproduce full urban scenarios at desk scale.
"""

from .collision import (
    CollisionParams,
    ObstacleEdgeObservation,
    braking_deceleration,
    collision_probability,
    lateral_offset_at_zero,
    smoothed_collision_probability,
)
from .fields import (
    FieldEvaluator,
    MarkingField,
    ObjectField,
    RiskFieldSet,
    build_risk_fields,
    marking_params,
    object_params,
)
from .graph import (
    AttrCmp,
    HasRole,
    NotExists,
    Ontology,
    Pattern,
    SceneGraph,
    TypeIs,
    default_ontology,
)
from .planner import (
    NmpcConfig,
    Reference,
    SolveStatus,
    Trajectory,
    build_reference,
    shift_warm_start,
    solve,
    trajectory_cost,
)
from .rules import (
    FixpointError,
    MissingConclusionError,
    Rule,
    RuleSet,
    apply_rules,
    crossing_acceptability,
    default_rule_set,
    risk_level,
)
from .scenarios import (
    ActorSpec,
    LaneSpec,
    MarkingSpec,
    Scenario,
    ScenarioError,
    builtin_family,
    load_scenarios,
    resolve_scenarios,
)
from .simulation import (
    CertaintyModel,
    SceneContext,
    SimConfig,
    SimResult,
    field_snapshot,
    run_batch,
    run_scenario,
)
from .vehicle import (
    Bounds,
    EgoInput,
    EgoState,
    VehicleParams,
    default_bounds,
    rollout,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "ActorSpec",
    "AttrCmp",
    "Bounds",
    "CertaintyModel",
    "CollisionParams",
    "EgoInput",
    "EgoState",
    "FieldEvaluator",
    "FixpointError",
    "HasRole",
    "LaneSpec",
    "MarkingField",
    "MarkingSpec",
    "MissingConclusionError",
    "NmpcConfig",
    "NotExists",
    "ObjectField",
    "ObstacleEdgeObservation",
    "Ontology",
    "Pattern",
    "Reference",
    "RiskFieldSet",
    "Rule",
    "RuleSet",
    "SceneContext",
    "SceneGraph",
    "Scenario",
    "ScenarioError",
    "SimConfig",
    "SimResult",
    "SolveStatus",
    "Trajectory",
    "TypeIs",
    "VehicleParams",
    "apply_rules",
    "braking_deceleration",
    "build_reference",
    "build_risk_fields",
    "builtin_family",
    "collision_probability",
    "crossing_acceptability",
    "default_bounds",
    "default_ontology",
    "default_rule_set",
    "field_snapshot",
    "lateral_offset_at_zero",
    "load_scenarios",
    "marking_params",
    "object_params",
    "resolve_scenarios",
    "risk_level",
    "rollout",
    "run_batch",
    "run_scenario",
    "shift_warm_start",
    "smoothed_collision_probability",
    "solve",
    "step",
    "trajectory_cost",
]
