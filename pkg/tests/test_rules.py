"""Prioritized default rules: crossing acceptability and object risk."""

import itertools

import pytest

from riskplan.graph import AttrCmp, SceneGraph, TypeIs
from riskplan.rules import (
    FixpointError,
    MissingConclusionError,
    Rule,
    RuleError,
    RuleHead,
    RuleSet,
    apply_rules,
    crossing_acceptability,
    default_rule_set,
    risk_level,
)


def scene(marking_type="dashed", side="right", object_ahead=None,
          oncoming=None, vru_crossing=False):
    """Synthetic scene with one marking plus optional context objects."""
    g = SceneGraph()
    ego = g.add_entity("ego", [])
    marking = g.add_entity("lane-marking", [
        ("lane_marking_type", marking_type),
        ("side_of_ego_lane", side),
    ])
    if object_ahead is not None:
        g.add_entity("artificial-object", [
            ("in_front_of_ego", True),
            ("distance_to_ego", float(object_ahead)),
        ])
    if oncoming is not None:
        g.add_entity("vehicle", [
            ("is_oncoming", True),
            ("distance_to_ego", float(oncoming)),
        ])
    if vru_crossing:
        g.add_entity("pedestrian", [("crossing_road", True)])
    return g, ego, marking


class TestRuleSetShape:
    def test_rule_counts_and_priorities(self):
        rs = default_rule_set()
        crossing = [r for r in rs.rules if r.head.relation_type == "crossing_acceptability"]
        risk = [r for r in rs.rules if r.head.relation_type == "has_risk_level"]
        assert sorted(r.priority for r in crossing) == [0, 0, 1, 2, 3, 4]
        assert sorted(r.priority for r in risk) == [0, 1, 2, 3]

    def test_unique_names(self):
        rs = default_rule_set()
        names = [r.name for r in rs.rules]
        assert len(set(names)) == len(names)

    def test_duplicate_names_rejected(self):
        head = RuleHead("has_risk_level", (("object", "o"),), (("risk_level", "low"),))
        r = Rule("dup", 0, (TypeIs("o", "object"),), head)
        with pytest.raises(RuleError):
            RuleSet([r, r])

    def test_unbound_head_variable_rejected(self):
        head = RuleHead("has_risk_level", (("object", "q"),), (("risk_level", "low"),))
        with pytest.raises(RuleError):
            Rule("bad", 0, (TypeIs("o", "object"),), head)

    def test_negative_priority_rejected(self):
        head = RuleHead("has_risk_level", (("object", "o"),), (("risk_level", "low"),))
        with pytest.raises(RuleError):
            Rule("bad", -1, (TypeIs("o", "object"),), head)


class TestCrossingAcceptability:
    def test_dashed_right_marking_crossable(self):
        g, _, m = scene("dashed", "right")
        apply_rules(g, default_rule_set())
        conclusion = crossing_acceptability(g, m)
        assert (conclusion.acceptability, conclusion.priority) == (1, 0)

    def test_dashed_left_no_obstacles_not_crossable(self):
        g, _, m = scene("dashed", "left")
        apply_rules(g, default_rule_set())
        relations = g.relations_at(m, "crossing_acceptability")
        priorities = sorted(g.attributes_of(r)["priority"] for r in relations)
        assert priorities == [0, 1]
        conclusion = crossing_acceptability(g, m)
        assert (conclusion.acceptability, conclusion.priority) == (0, 1)

    def test_blocked_lane_with_oncoming_not_crossable(self):
        g, _, m = scene("dashed", "left", object_ahead=15.0, oncoming=40.0)
        apply_rules(g, default_rule_set())
        relations = g.relations_at(m, "crossing_acceptability")
        priorities = sorted(g.attributes_of(r)["priority"] for r in relations)
        assert priorities == [0, 1, 2, 3]
        conclusion = crossing_acceptability(g, m)
        assert (conclusion.acceptability, conclusion.priority) == (0, 3)

    def test_blocked_lane_clear_road_crossable(self):
        g, _, m = scene("dashed", "left", object_ahead=15.0)
        apply_rules(g, default_rule_set())
        conclusion = crossing_acceptability(g, m)
        assert (conclusion.acceptability, conclusion.priority) == (1, 2)

    def test_vru_crossing_blocks_everything(self):
        g, _, m = scene("dashed", "left", object_ahead=15.0, vru_crossing=True)
        apply_rules(g, default_rule_set())
        conclusion = crossing_acceptability(g, m)
        assert (conclusion.acceptability, conclusion.priority) == (0, 4)

    def test_solid_marking_not_crossable(self):
        g, _, m = scene("solid", "right")
        apply_rules(g, default_rule_set())
        conclusion = crossing_acceptability(g, m)
        assert (conclusion.acceptability, conclusion.priority) == (0, 0)

    def test_distant_object_does_not_unlock(self):
        g, _, m = scene("dashed", "left", object_ahead=25.0)
        apply_rules(g, default_rule_set())
        assert crossing_acceptability(g, m).acceptability == 0

    def test_distant_oncoming_ignored(self):
        g, _, m = scene("dashed", "left", object_ahead=15.0, oncoming=60.0)
        apply_rules(g, default_rule_set())
        assert crossing_acceptability(g, m).acceptability == 1

    def test_missing_conclusion_raises(self):
        g = SceneGraph()
        m = g.add_entity("lane-marking", [("lane_marking_type", "dashed")])
        with pytest.raises(MissingConclusionError):
            crossing_acceptability(g, m)

    def test_truth_table_priority_dominance(self):
        # Exhaustive context flags: line type x side x object<20 x oncoming<50
        # x VRU crossing.  Expected winner recomputed by an independent
        # priority-max model of the rule table.
        for marking_type, left, blocked, oncoming, vru in itertools.product(
            ("dashed", "solid"), (False, True), (False, True), (False, True),
            (False, True),
        ):
            g, _, m = scene(
                marking_type,
                "left" if left else "right",
                object_ahead=15.0 if blocked else None,
                oncoming=40.0 if oncoming else None,
                vru_crossing=vru,
            )
            apply_rules(g, default_rule_set())
            fired = []  # (priority, acceptability)
            if marking_type == "dashed":
                fired.append((0, 1))
                if left:
                    fired.append((1, 0))
                    if blocked:
                        fired.append((2, 1))
                    if oncoming:
                        fired.append((3, 0))
                if vru:
                    fired.append((4, 0))
            else:
                fired.append((0, 0))
            expected_priority, expected_accept = max(fired)
            conclusion = crossing_acceptability(g, m)
            label = (marking_type, left, blocked, oncoming, vru)
            assert conclusion.acceptability == expected_accept, label
            assert conclusion.priority == expected_priority, label

    def test_oncoming_toggles_conclusion(self):
        g, _, m = scene("dashed", "left", object_ahead=15.0)
        rs = default_rule_set()
        apply_rules(g, rs)
        assert crossing_acceptability(g, m).acceptability == 1
        g.add_entity("vehicle", [("is_oncoming", True), ("distance_to_ego", 40.0)])
        apply_rules(g, rs)
        assert crossing_acceptability(g, m).acceptability == 0


class TestRiskLevel:
    def test_default_medium(self):
        g = SceneGraph()
        obj = g.add_entity("vehicle", [])
        apply_rules(g, default_rule_set())
        conclusion = risk_level(g, obj)
        assert (conclusion.level, conclusion.priority) == ("medium", 0)

    def test_small_certain_artificial_object_low(self):
        g = SceneGraph()
        obj = g.add_entity("artificial-object", [
            ("classification_certainty", 0.9),
            ("length", 0.3), ("width", 0.3), ("height", 0.3),
        ])
        apply_rules(g, default_rule_set())
        conclusion = risk_level(g, obj)
        assert (conclusion.level, conclusion.priority) == ("low", 1)

    def test_uncertain_pedestrian_on_collision_course_high(self):
        g = SceneGraph()
        obj = g.add_entity("pedestrian", [
            ("classification_certainty", 0.1),
            ("collision_probability", 0.06),
        ])
        apply_rules(g, default_rule_set())
        conclusion = risk_level(g, obj)
        assert (conclusion.level, conclusion.priority) == ("high", 2)

    def test_high_collision_probability_high(self):
        g = SceneGraph()
        obj = g.add_entity("vehicle", [("collision_probability", 0.25)])
        apply_rules(g, default_rule_set())
        conclusion = risk_level(g, obj)
        assert (conclusion.level, conclusion.priority) == ("high", 3)

    def test_large_object_not_low(self):
        g = SceneGraph()
        obj = g.add_entity("artificial-object", [
            ("classification_certainty", 0.9),
            ("length", 0.3), ("width", 0.3), ("height", 1.2),
        ])
        apply_rules(g, default_rule_set())
        assert risk_level(g, obj).level == "medium"

    def test_every_object_covered(self):
        g = SceneGraph()
        ids = [
            g.add_entity("vehicle", []),
            g.add_entity("pedestrian", []),
            g.add_entity("artificial-object", []),
        ]
        apply_rules(g, default_rule_set())
        for node_id in ids:
            assert risk_level(g, node_id).level in ("low", "medium", "high")


class TestApplyRules:
    def test_idempotent(self):
        g, _, _ = scene("dashed", "left", object_ahead=15.0, oncoming=40.0,
                        vru_crossing=True)
        rs = default_rule_set()
        first = apply_rules(g, rs)
        assert first > 0
        assert apply_rules(g, rs) == 0

    def test_counts_inserted_relations(self):
        g, _, _ = scene("dashed", "right")
        assert apply_rules(g, default_rule_set()) == 1

    def test_fixpoint_guard_trips_on_pathological_rules(self):
        # A rule whose head creates a fresh matching opportunity every sweep:
        # each inserted relation is itself an anchor for another insertion.
        g = SceneGraph()
        g.add_entity("vehicle", [("speed", 1.0)])

        class GrowingGraph(SceneGraph):
            def has_relation(self, relation_type, roles, attributes):
                return False  # defeat deduplication

        grow = GrowingGraph()
        grow.add_entity("vehicle", [("speed", 1.0)])
        head = RuleHead("has_risk_level", (("object", "o"),),
                        (("risk_level", "medium"),))
        rule = Rule("runaway", 0, (TypeIs("o", "vehicle"),), head)
        with pytest.raises(FixpointError):
            apply_rules(grow, RuleSet([rule]))

    def test_generation_advances_only_on_insertion(self):
        g, _, _ = scene("dashed", "right")
        rs = default_rule_set()
        apply_rules(g, rs)
        gen = g.generation
        apply_rules(g, rs)
        assert g.generation == gen
