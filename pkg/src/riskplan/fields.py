"""Gaussian risk fields around objects and along lane markings.

Object fields are anisotropic Gaussians aligned with the object's predicted
heading at each planning step; marking fields are Gaussian ridges over the
lateral distance to the marking polynomial.  Amplitudes and widths come from
lookup tables keyed by object class and resolved risk level, respectively by
line type and resolved crossing acceptability, which is how the reasoning
layer reshapes the cost landscape of the planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import rules as rules_mod
from .graph import SceneGraph

#: (line type, acceptability) -> (amplitude, sigma)
MARKING_RISK_TABLE: Dict[Tuple[str, int], Tuple[float, float]] = {
    ("solid", 0): (4.0, 0.6),
    ("solid", 1): (0.0, 0.6),
    ("dashed", 0): (1.5, 0.6),
    ("dashed", 1): (0.0, 0.6),
}

#: (object class, risk level) -> (amplitude, sigma padding)
OBJECT_RISK_TABLE: Dict[Tuple[str, str], Tuple[float, float]] = {
    ("car", "low"): (2.0, 0.05),
    ("car", "medium"): (3.0, 0.1),
    ("car", "high"): (4.0, 0.3),
    ("artificial_object", "low"): (1.0, 0.2),
    ("artificial_object", "medium"): (2.0, 0.25),
    ("artificial_object", "high"): (3.0, 0.4),
    ("pedestrian", "low"): (2.0, 1.2),
    ("pedestrian", "medium"): (3.0, 1.7),
    ("pedestrian", "high"): (4.0, 2.2),
}

LENGTH_GAIN = 1.5
WIDTH_GAIN = 1.2

#: entity types in the scene graph -> object class used in the lookup
ENTITY_CLASS = {
    "vehicle": "car",
    "pedestrian": "pedestrian",
    "artificial-object": "artificial_object",
}


def marking_params(line_type: str, acceptability: int) -> Tuple[float, float]:
    """Amplitude and sigma of a marking field."""
    key = (line_type, int(acceptability))
    if key not in MARKING_RISK_TABLE:
        raise ValueError(
            f"no marking parameters for line type {line_type!r} with "
            f"acceptability {acceptability!r}"
        )
    return MARKING_RISK_TABLE[key]


def object_params(
    object_class: str, risk: str, length: float, width: float
) -> Tuple[float, float, float]:
    """Amplitude, longitudinal sigma and lateral sigma of an object field.

    Sigmas scale with the object footprint plus a risk-dependent padding.
    Classes outside the table fall back to the artificial-object rows.
    """
    if risk not in rules_mod.RISK_LEVELS:
        raise ValueError(f"unknown risk level {risk!r}")
    if length <= 0 or width <= 0:
        raise ValueError("object length and width must be positive")
    cls = object_class if (object_class, risk) in OBJECT_RISK_TABLE else "artificial_object"
    amplitude, pad = OBJECT_RISK_TABLE[(cls, risk)]
    return amplitude, LENGTH_GAIN * length + pad, WIDTH_GAIN * width + pad


@dataclass
class ObjectField:
    """Heading-aligned Gaussian field following an object's predicted poses.

    ``centers`` has one (x, y, heading) row per planning step, row 0 being
    the current pose.
    """

    amplitude: float
    sigma_x: float
    sigma_y: float
    centers: np.ndarray
    node_id: int = -1

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=float)
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("sigmas must be positive")
        if self.centers.ndim != 2 or self.centers.shape[1] != 3:
            raise ValueError("centers must be an (N+1, 3) array")

    def value(self, k: int, x: float, y: float) -> float:
        cx, cy, heading = self.centers[k]
        dx, dy = x - cx, y - cy
        c, s = math.cos(heading), math.sin(heading)
        u = c * dx + s * dy
        w = -s * dx + c * dy
        quad = (u / self.sigma_x) ** 2 + (w / self.sigma_y) ** 2
        return self.amplitude * math.exp(-0.5 * quad)

    def gradient(self, k: int, x: float, y: float) -> Tuple[float, float]:
        cx, cy, heading = self.centers[k]
        dx, dy = x - cx, y - cy
        c, s = math.cos(heading), math.sin(heading)
        u = c * dx + s * dy
        w = -s * dx + c * dy
        gu = u / self.sigma_x**2
        gw = w / self.sigma_y**2
        val = self.amplitude * math.exp(-0.5 * (u * gu + w * gw))
        return (-val * (gu * c - gw * s), -val * (gu * s + gw * c))


@dataclass
class MarkingField:
    """Gaussian ridge over the lateral distance to a marking polynomial.

    ``coefficients`` are ascending powers of x describing the marking shape
    y(x) = c0 + c1 x + c2 x^2 + c3 x^3.
    """

    amplitude: float
    sigma: float
    coefficients: np.ndarray
    node_id: int = -1

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.coefficients.shape != (4,):
            raise ValueError("coefficients must have 4 entries (cubic)")

    def centerline(self, x: float) -> float:
        c0, c1, c2, c3 = self.coefficients
        return c0 + x * (c1 + x * (c2 + x * c3))

    def slope(self, x: float) -> float:
        _, c1, c2, c3 = self.coefficients
        return c1 + x * (2.0 * c2 + x * 3.0 * c3)

    def value(self, x: float, y: float) -> float:
        r = y - self.centerline(x)
        return self.amplitude * math.exp(-0.5 * (r / self.sigma) ** 2)

    def gradient(self, x: float, y: float) -> Tuple[float, float]:
        r = y - self.centerline(x)
        val = self.amplitude * math.exp(-0.5 * (r / self.sigma) ** 2)
        g = val * r / self.sigma**2
        return (g * self.slope(x), -g)


@dataclass
class RiskFieldSet:
    """All fields active for one planning cycle."""

    objects: Tuple[ObjectField, ...] = ()
    markings: Tuple[MarkingField, ...] = ()

    def __post_init__(self) -> None:
        self.objects = tuple(self.objects)
        self.markings = tuple(self.markings)

    def __len__(self) -> int:
        return len(self.objects) + len(self.markings)

    def total(self, k: int, x: float, y: float) -> float:
        """Total risk at position (x, y) for planning step k."""
        total = 0.0
        for f in self.objects:
            total += f.value(k, x, y)
        for f in self.markings:
            total += f.value(x, y)
        return total

    def total_gradient(self, k: int, x: float, y: float) -> Tuple[float, float]:
        gx = gy = 0.0
        for f in self.objects:
            dgx, dgy = f.gradient(k, x, y)
            gx += dgx
            gy += dgy
        for f in self.markings:
            dgx, dgy = f.gradient(x, y)
            gx += dgx
            gy += dgy
        return gx, gy

    def amplitude_bound(self) -> float:
        """Upper bound of the total field: the sum of all amplitudes."""
        return sum(f.amplitude for f in self.objects) + sum(
            f.amplitude for f in self.markings
        )


def build_risk_fields(
    graph: SceneGraph,
    predictions: Mapping[int, np.ndarray],
    ruleset=None,
) -> RiskFieldSet:
    """Assemble the field set from a scene graph with resolved conclusions.

    ``predictions`` maps object entity ids to (N+1, 3) predicted pose arrays;
    every object in the graph must have one.  Fields with zero amplitude
    (count-free markings deemed crossable) are dropped.  The rule conclusions
    must already be present in the graph.
    """
    object_fields = []
    horizon_len: Optional[int] = None
    for oid in graph.entities_of_type("object"):
        if oid not in predictions:
            raise ValueError(f"missing prediction for object entity {oid}")
        centers = np.asarray(predictions[oid], dtype=float)
        if horizon_len is None:
            horizon_len = centers.shape[0]
        elif centers.shape[0] != horizon_len:
            raise ValueError("predictions must all cover the same horizon")
        risk = rules_mod.risk_level(graph, oid)
        node = graph.node(oid)
        cls = ENTITY_CLASS.get(node.type_name, "artificial_object")
        length = graph.get_attribute(oid, "length")
        width = graph.get_attribute(oid, "width")
        if length is None or width is None:
            raise ValueError(f"object entity {oid} lacks length/width attributes")
        amplitude, sigma_x, sigma_y = object_params(cls, risk.level, length, width)
        if amplitude > 0.0:
            object_fields.append(
                ObjectField(amplitude, sigma_x, sigma_y, centers, node_id=oid)
            )
    marking_fields = []
    for mid in graph.entities_of_type("lane-marking"):
        line_type = graph.get_attribute(mid, "lane_marking_type")
        if line_type is None:
            raise ValueError(f"marking entity {mid} lacks a lane_marking_type")
        conclusion = rules_mod.crossing_acceptability(graph, mid)
        amplitude, sigma = marking_params(line_type, conclusion.acceptability)
        if amplitude <= 0.0:
            continue
        coeffs = [graph.get_attribute(mid, f"poly_c{i}") for i in range(4)]
        if any(c is None for c in coeffs):
            raise ValueError(f"marking entity {mid} lacks polynomial attributes")
        marking_fields.append(MarkingField(amplitude, sigma, coeffs, node_id=mid))
    return RiskFieldSet(tuple(object_fields), tuple(marking_fields))


class FieldEvaluator:
    """Vectorized per-stage evaluation of a field set over a whole horizon.

    Precomputes packed arrays so that evaluating total risk and its spatial
    gradient for all stages k = 1..N costs a handful of numpy operations.
    """

    def __init__(self, fieldset: RiskFieldSet, horizon: int) -> None:
        self.horizon = horizon
        objs = fieldset.objects
        self.n_objects = len(objs)
        if objs:
            for f in objs:
                if f.centers.shape[0] < horizon + 1:
                    raise ValueError("object prediction shorter than the horizon")
            self.o_amp = np.array([f.amplitude for f in objs])[:, None]
            self.o_cx = np.stack([f.centers[1 : horizon + 1, 0] for f in objs])
            self.o_cy = np.stack([f.centers[1 : horizon + 1, 1] for f in objs])
            head = np.stack([f.centers[1 : horizon + 1, 2] for f in objs])
            self.o_cos = np.cos(head)
            self.o_sin = np.sin(head)
            self.o_isx2 = np.array([1.0 / f.sigma_x**2 for f in objs])[:, None]
            self.o_isy2 = np.array([1.0 / f.sigma_y**2 for f in objs])[:, None]
        marks = fieldset.markings
        self.n_markings = len(marks)
        if marks:
            self.m_amp = np.array([f.amplitude for f in marks])[:, None]
            self.m_is2 = np.array([1.0 / f.sigma**2 for f in marks])[:, None]
            self.m_coeffs = np.stack([f.coefficients for f in marks])

    def stage_risk(self, xs: np.ndarray, ys: np.ndarray, with_grad: bool = True):
        """Risk and gradient rows for stage positions xs, ys (k = 1..N).

        Returns (risk, d_risk/dx, d_risk/dy) arrays of the same length as xs;
        the gradient entries are None when with_grad is false.
        """
        n = xs.shape[0]
        risk = np.zeros(n)
        gx = np.zeros(n) if with_grad else None
        gy = np.zeros(n) if with_grad else None
        if self.n_objects:
            dx = xs[None, :] - self.o_cx[:, :n]
            dy = ys[None, :] - self.o_cy[:, :n]
            c = self.o_cos[:, :n]
            s = self.o_sin[:, :n]
            u = c * dx + s * dy
            w = -s * dx + c * dy
            gu = u * self.o_isx2
            gw = w * self.o_isy2
            val = self.o_amp * np.exp(-0.5 * (u * gu + w * gw))
            risk += val.sum(axis=0)
            if with_grad:
                gx -= (val * (gu * c - gw * s)).sum(axis=0)
                gy -= (val * (gu * s + gw * c)).sum(axis=0)
        if self.n_markings:
            c0 = self.m_coeffs[:, 0][:, None]
            c1 = self.m_coeffs[:, 1][:, None]
            c2 = self.m_coeffs[:, 2][:, None]
            c3 = self.m_coeffs[:, 3][:, None]
            X = xs[None, :]
            center = c0 + X * (c1 + X * (c2 + X * c3))
            r = ys[None, :] - center
            val = self.m_amp * np.exp(-0.5 * r * r * self.m_is2)
            risk += val.sum(axis=0)
            if with_grad:
                g = val * r * self.m_is2
                slope = c1 + X * (2.0 * c2 + X * (3.0 * c3))
                gx += (g * slope).sum(axis=0)
                gy -= g.sum(axis=0)
        return risk, gx, gy
