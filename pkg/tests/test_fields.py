"""Gaussian risk fields: parameter tables, evaluation, gradients, assembly."""

import math

import numpy as np
import pytest

from riskplan.fields import (
    MarkingField,
    ObjectField,
    RiskFieldSet,
    build_risk_fields,
    marking_params,
    object_params,
)
from riskplan.graph import SceneGraph
from riskplan.rules import apply_rules, default_rule_set

HORIZON = 23


def static_centers(x, y, theta, n=HORIZON):
    return np.tile(np.array([x, y, theta], dtype=float), (n + 1, 1))


class TestMarkingParams:
    @pytest.mark.parametrize(
        "line_type,acceptability,expected",
        [
            ("solid", 0, (4.0, 0.6)),
            ("solid", 1, (0.0, 0.6)),
            ("dashed", 0, (1.5, 0.6)),
            ("dashed", 1, (0.0, 0.6)),
        ],
    )
    def test_lookup_table(self, line_type, acceptability, expected):
        assert marking_params(line_type, acceptability) == pytest.approx(expected)

    def test_unknown_line_type_rejected(self):
        with pytest.raises(ValueError):
            marking_params("zigzag", 0)


class TestObjectParams:
    @pytest.mark.parametrize(
        "cls,risk,l,w,expected",
        [
            ("car", "low", 4.0, 2.0, (2.0, 6.05, 2.45)),
            ("car", "medium", 4.0, 2.0, (3.0, 6.10, 2.50)),
            ("car", "high", 4.0, 2.0, (4.0, 6.30, 2.70)),
            ("artificial_object", "low", 0.3, 0.3, (1.0, 0.65, 0.56)),
            ("artificial_object", "medium", 0.3, 0.3, (2.0, 0.70, 0.61)),
            ("artificial_object", "high", 0.3, 0.3, (3.0, 0.85, 0.76)),
            ("pedestrian", "low", 0.5, 0.5, (2.0, 1.95, 1.80)),
            ("pedestrian", "medium", 0.5, 0.5, (3.0, 2.45, 2.30)),
            ("pedestrian", "high", 0.5, 0.5, (4.0, 2.95, 2.80)),
        ],
    )
    def test_lookup_table(self, cls, risk, l, w, expected):
        assert object_params(cls, risk, l, w) == pytest.approx(expected)

    def test_unknown_class_falls_back_to_artificial_object(self):
        assert object_params("unicycle", "medium", 0.3, 0.3) == pytest.approx(
            object_params("artificial_object", "medium", 0.3, 0.3)
        )

    def test_unknown_risk_rejected(self):
        with pytest.raises(ValueError):
            object_params("car", "extreme", 4.0, 2.0)

    def test_nonpositive_size_rejected(self):
        with pytest.raises(ValueError):
            object_params("car", "low", 0.0, 2.0)
        with pytest.raises(ValueError):
            object_params("car", "low", 4.0, -1.0)


class TestObjectFieldEvaluation:
    def test_maximum_at_center(self):
        field = ObjectField(4.0, 6.3, 2.7, static_centers(10.0, -3.0, 0.0))
        assert field.value(0, 10.0, -3.0) == pytest.approx(4.0)

    def test_one_sigma_along_heading(self):
        field = ObjectField(4.0, 6.3, 2.7, static_centers(10.0, -3.0, 0.0))
        assert field.value(0, 10.0 + 6.3, -3.0) == pytest.approx(4.0 * math.exp(-0.5))

    def test_one_sigma_lateral(self):
        field = ObjectField(4.0, 6.3, 2.7, static_centers(10.0, -3.0, 0.0))
        assert field.value(0, 10.0, -3.0 + 2.7) == pytest.approx(4.0 * math.exp(-0.5))

    def test_rotated_heading_axis(self):
        field = ObjectField(4.0, 6.3, 2.7, static_centers(0.0, 0.0, math.pi / 2.0))
        assert field.value(0, 0.0, 6.3) == pytest.approx(4.0 * math.exp(-0.5))
        assert field.value(0, 2.7, 0.0) == pytest.approx(4.0 * math.exp(-0.5))

    def test_zero_amplitude_everywhere_zero(self):
        field = ObjectField(0.0, 1.0, 1.0, static_centers(0.0, 0.0, 0.0))
        for x, y in ((0.0, 0.0), (1.0, 2.0), (-5.0, 3.0)):
            assert field.value(0, x, y) == 0.0

    def test_rotation_invariance_about_center(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            theta = float(rng.uniform(0, 2 * math.pi))
            phi = float(rng.uniform(0, 2 * math.pi))
            dx, dy = float(rng.uniform(-4, 4)), float(rng.uniform(-4, 4))
            base = ObjectField(3.0, 2.0, 1.0, static_centers(5.0, 1.0, theta))
            rotated = ObjectField(3.0, 2.0, 1.0, static_centers(5.0, 1.0, theta + phi))
            c, s = math.cos(phi), math.sin(phi)
            rx, ry = c * dx - s * dy, s * dx + c * dy
            assert rotated.value(0, 5.0 + rx, 1.0 + ry) == pytest.approx(
                base.value(0, 5.0 + dx, 1.0 + dy), rel=1e-12
            )

    def test_time_varying_centers(self):
        centers = np.array([[k * 1.0, 0.0, 0.0] for k in range(HORIZON + 1)])
        field = ObjectField(2.0, 1.0, 1.0, centers)
        assert field.value(5, 5.0, 0.0) == pytest.approx(2.0)
        assert field.value(0, 5.0, 0.0) < 2.0e-5

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            ObjectField(-1.0, 1.0, 1.0, static_centers(0, 0, 0))
        with pytest.raises(ValueError):
            ObjectField(1.0, 0.0, 1.0, static_centers(0, 0, 0))


class TestMarkingFieldEvaluation:
    def test_on_the_line(self):
        field = MarkingField(4.0, 0.6, np.array([1.75, 0.0, 0.0, 0.0]))
        assert field.value(12.0, 1.75) == pytest.approx(4.0)

    def test_one_sigma_offset(self):
        field = MarkingField(4.0, 0.6, np.array([1.75, 0.0, 0.0, 0.0]))
        assert field.value(12.0, 1.75 + 0.6) == pytest.approx(4.0 * math.exp(-0.5))

    def test_zero_amplitude_everywhere_zero(self):
        field = MarkingField(0.0, 0.6, np.array([1.75, 0.0, 0.0, 0.0]))
        for x in np.linspace(-20, 20, 9):
            assert field.value(float(x), 1.75) == 0.0

    def test_cubic_centerline(self):
        coeffs = np.array([0.5, 0.01, -0.002, 0.0003])
        field = MarkingField(2.0, 0.6, coeffs)
        for x in (-3.0, 0.0, 7.0):
            line_y = coeffs[0] + coeffs[1] * x + coeffs[2] * x**2 + coeffs[3] * x**3
            assert field.centerline(x) == pytest.approx(line_y)
            assert field.value(x, line_y) == pytest.approx(2.0)
            assert field.value(x, line_y + 0.6) == pytest.approx(2.0 * math.exp(-0.5))

    def test_exhaustive_table_field_peaks(self):
        # Every (line type, acceptability) table row, evaluated on the line,
        # one sigma off, and far away: 12 checks in total.
        for line_type in ("solid", "dashed"):
            for acceptability in (0, 1):
                amplitude, sigma = marking_params(line_type, acceptability)
                field = MarkingField(amplitude, sigma, np.array([0.0, 0.0, 0.0, 0.0]))
                assert field.value(3.0, 0.0) == pytest.approx(amplitude)
                assert field.value(3.0, sigma) == pytest.approx(
                    amplitude * math.exp(-0.5)
                )
                assert field.value(3.0, 50.0) == pytest.approx(0.0, abs=1e-12)


class TestGradients:
    def test_object_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        field = ObjectField(4.0, 2.5, 1.2, static_centers(3.0, -1.0, 0.7))
        h = 1e-6
        checked = 0
        while checked < 100:
            x = float(rng.uniform(-3, 9))
            y = float(rng.uniform(-7, 5))
            gx, gy = field.gradient(0, x, y)
            fx = (field.value(0, x + h, y) - field.value(0, x - h, y)) / (2 * h)
            fy = (field.value(0, x, y + h) - field.value(0, x, y - h)) / (2 * h)
            scale = max(abs(fx), abs(fy), 1e-9)
            if scale < 1e-8:
                continue  # zero-gradient region: relative error undefined
            assert abs(gx - fx) / scale < 1e-6
            assert abs(gy - fy) / scale < 1e-6
            checked += 1

    def test_marking_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        field = MarkingField(3.0, 0.6, np.array([0.2, 0.05, -0.003, 0.0001]))
        h = 1e-6
        checked = 0
        while checked < 100:
            x = float(rng.uniform(-10, 10))
            y = float(rng.uniform(-3, 3))
            gx, gy = field.gradient(x, y)
            fx = (field.value(x + h, y) - field.value(x - h, y)) / (2 * h)
            fy = (field.value(x, y + h) - field.value(x, y - h)) / (2 * h)
            scale = max(abs(fx), abs(fy), 1e-9)
            if scale < 1e-8:
                continue
            assert abs(gx - fx) / scale < 1e-6
            assert abs(gy - fy) / scale < 1e-6
            checked += 1

    def test_total_gradient_sums_members(self):
        fs = RiskFieldSet(
            objects=(ObjectField(2.0, 1.5, 1.0, static_centers(4.0, 0.0, 0.3)),),
            markings=(MarkingField(1.5, 0.6, np.array([1.75, 0.0, 0.0, 0.0])),),
        )
        x, y = 3.2, 0.9
        gx, gy = fs.total_gradient(0, x, y)
        ogx, ogy = fs.objects[0].gradient(0, x, y)
        mgx, mgy = fs.markings[0].gradient(x, y)
        assert gx == pytest.approx(ogx + mgx)
        assert gy == pytest.approx(ogy + mgy)


class TestRiskFieldSet:
    def test_total_sums_and_is_bounded(self):
        fs = RiskFieldSet(
            objects=(
                ObjectField(4.0, 2.0, 1.0, static_centers(5.0, 0.0, 0.0)),
                ObjectField(3.0, 1.0, 1.0, static_centers(12.0, 2.0, 0.5)),
            ),
            markings=(MarkingField(1.5, 0.6, np.array([1.75, 0.0, 0.0, 0.0])),),
        )
        bound = fs.amplitude_bound()
        assert bound == pytest.approx(8.5)
        rng = np.random.default_rng(5)
        for _ in range(50):
            x, y = float(rng.uniform(-5, 20)), float(rng.uniform(-5, 5))
            total = fs.total(0, x, y)
            assert 0.0 <= total <= bound + 1e-12

    def test_empty_set_zero(self):
        fs = RiskFieldSet()
        assert fs.total(0, 1.0, 2.0) == 0.0
        assert fs.amplitude_bound() == 0.0
        assert fs.total_gradient(0, 1.0, 2.0) == pytest.approx((0.0, 0.0))


class TestBuildRiskFields:
    def build_graph(self):
        g = SceneGraph()
        g.add_entity("ego", [])
        return g

    def test_parked_car_with_two_markings(self):
        g = self.build_graph()
        car = g.add_entity("vehicle", [
            ("length", 4.0), ("width", 2.0),
            ("pos_x", 20.0), ("pos_y", -3.0), ("heading", 0.0),
        ])
        g.add_entity("lane-marking", [
            ("lane_marking_type", "dashed"), ("side_of_ego_lane", "right"),
            ("poly_c0", -1.75), ("poly_c1", 0.0), ("poly_c2", 0.0), ("poly_c3", 0.0),
        ])
        g.add_entity("lane-marking", [
            ("lane_marking_type", "dashed"), ("side_of_ego_lane", "left"),
            ("poly_c0", 1.75), ("poly_c1", 0.0), ("poly_c2", 0.0), ("poly_c3", 0.0),
        ])
        apply_rules(g, default_rule_set())
        predictions = {car: static_centers(20.0, -3.0, 0.0)}
        fs = build_risk_fields(g, predictions)
        assert len(fs.objects) == 1
        assert fs.objects[0].amplitude == pytest.approx(3.0)  # medium-risk car
        # The crossable (right) marking resolves to zero amplitude and is
        # dropped from the set; only the uncrossable left marking remains.
        assert len(fs.markings) == 1
        assert fs.markings[0].amplitude == pytest.approx(1.5)
        assert fs.markings[0].centerline(0.0) == pytest.approx(1.75)

    def test_empty_scene(self):
        g = self.build_graph()
        apply_rules(g, default_rule_set())
        fs = build_risk_fields(g, {})
        assert fs.objects == ()
        assert fs.markings == ()

    def test_crossing_pedestrian_escalates_marking_and_object(self):
        g = self.build_graph()
        ped = g.add_entity("pedestrian", [
            ("length", 0.5), ("width", 0.5),
            ("pos_x", 30.0), ("pos_y", 4.0), ("heading", -math.pi / 2.0),
            ("crossing_road", True),
            ("classification_certainty", 0.9),
            ("collision_probability", 0.25),
        ])
        g.add_entity("lane-marking", [
            ("lane_marking_type", "dashed"), ("side_of_ego_lane", "left"),
            ("poly_c0", 1.75), ("poly_c1", 0.0), ("poly_c2", 0.0), ("poly_c3", 0.0),
        ])
        apply_rules(g, default_rule_set())
        predictions = {ped: static_centers(30.0, 4.0, -math.pi / 2.0)}
        fs = build_risk_fields(g, predictions)
        assert len(fs.markings) == 1
        assert fs.markings[0].amplitude == pytest.approx(1.5)  # crossing refused
        assert len(fs.objects) == 1
        assert fs.objects[0].amplitude == pytest.approx(4.0)  # high-risk pedestrian

    def test_missing_prediction_is_input_error(self):
        g = self.build_graph()
        g.add_entity("vehicle", [
            ("length", 4.0), ("width", 2.0),
            ("pos_x", 20.0), ("pos_y", -3.0), ("heading", 0.0),
        ])
        apply_rules(g, default_rule_set())
        with pytest.raises((KeyError, ValueError)):
            build_risk_fields(g, {})

    def test_field_node_ids_reference_graph(self):
        g = self.build_graph()
        car = g.add_entity("vehicle", [
            ("length", 4.0), ("width", 2.0),
            ("pos_x", 20.0), ("pos_y", -3.0), ("heading", 0.0),
        ])
        apply_rules(g, default_rule_set())
        fs = build_risk_fields(g, {car: static_centers(20.0, -3.0, 0.0)})
        assert fs.objects[0].node_id == car
