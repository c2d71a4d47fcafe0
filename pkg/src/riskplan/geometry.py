"""Planar oriented-rectangle geometry: corners, overlap, minimum distance."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def rect_corners(
    cx: float, cy: float, heading: float, length: float, width: float
) -> np.ndarray:
    """Counter-clockwise corners of an oriented rectangle around its center."""
    if length <= 0 or width <= 0:
        raise ValueError("length and width must be positive")
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([(cx + c * lx - s * ly, cy + s * lx + c * ly) for lx, ly in local])


def _axes(corners: np.ndarray):
    edges = np.roll(corners, -1, axis=0) - corners
    # rectangle: two unique edge directions suffice
    for edge in edges[:2]:
        norm = math.hypot(edge[0], edge[1])
        yield (-edge[1] / norm, edge[0] / norm)


def polygons_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals."""
    for poly in (a, b):
        for ax, ay in _axes(poly):
            pa = a[:, 0] * ax + a[:, 1] * ay
            pb = b[:, 0] * ax + b[:, 1] * ay
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _segment_distance(p1, p2, q1, q2) -> float:
    """Minimum distance between two segments."""

    def point_seg(p, a, b) -> float:
        ab = (b[0] - a[0], b[1] - a[1])
        ap = (p[0] - a[0], p[1] - a[1])
        denom = ab[0] * ab[0] + ab[1] * ab[1]
        t = 0.0 if denom == 0.0 else max(0.0, min(1.0, (ap[0] * ab[0] + ap[1] * ab[1]) / denom))
        dx = p[0] - (a[0] + t * ab[0])
        dy = p[1] - (a[1] + t * ab[1])
        return math.hypot(dx, dy)

    # proper intersection means zero distance
    d1 = (p2[0] - p1[0], p2[1] - p1[1])
    d2 = (q2[0] - q1[0], q2[1] - q1[1])
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if denom != 0.0:
        t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / denom
        s = ((q1[0] - p1[0]) * d1[1] - (q1[1] - p1[1]) * d1[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= s <= 1.0:
            return 0.0
    return min(
        point_seg(p1, q1, q2),
        point_seg(p2, q1, q2),
        point_seg(q1, p1, p2),
        point_seg(q2, p1, p2),
    )


def polygon_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between two convex quadrilaterals (0 when they
    overlap or touch)."""
    if polygons_overlap(a, b):
        return 0.0
    best = math.inf
    for i in range(4):
        p1, p2 = a[i], a[(i + 1) % 4]
        for j in range(4):
            q1, q2 = b[j], b[(j + 1) % 4]
            d = _segment_distance(p1, p2, q1, q2)
            if d < best:
                best = d
    return best


def point_in_polygon(x: float, y: float, corners: Sequence) -> bool:
    """Point containment for a convex counter-clockwise polygon."""
    sign = 0
    n = len(corners)
    for i in range(n):
        x1, y1 = corners[i]
        x2, y2 = corners[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross != 0:
            if sign == 0:
                sign = 1 if cross > 0 else -1
            elif (cross > 0) != (sign > 0):
                return False
    return True
