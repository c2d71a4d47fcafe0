"""Analytic collision probability against an obstacle edge.

An obstacle edge is observed as a longitudinal distance ``x_bar``, a lateral
offset ``y_bar``, a relative heading ``psi_bar`` and an edge length ``w_t``,
all measured in the edge frame (longitudinal axis along the edge normal).
Continuing on the current course, the ego reaches the edge plane with lateral
offset ``y_bar + x_bar*tan(psi_bar)``; a collision occurs when that offset is
smaller in magnitude than half the combined widths.  Observation noise is
propagated to a Gaussian over the offset, and the resulting probability is
attenuated by a logistic factor in the deceleration needed to stop short of
the edge, so threats that are easy to brake for contribute little risk.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

SMALL_ANGLE_LIMIT = 0.3  # rad; beyond this the linearized variance degrades

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ObstacleEdgeObservation:
    """Relative observation of one obstacle edge with noise variances."""

    x_bar: float
    y_bar: float
    psi_bar: float
    w_t: float
    var_x: float = 0.25
    var_y: float = 0.04
    var_psi: float = 0.0025
    var_wt: float = 0.04

    def __post_init__(self) -> None:
        if self.w_t <= 0:
            raise ValueError("edge length w_t must be positive")
        for name in ("var_x", "var_y", "var_psi", "var_wt"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class CollisionParams:
    """Ego width and braking-smoothing parameters."""

    w_e: float = 1.9
    d0: float = 3.0
    alpha: float = 2.0

    def __post_init__(self) -> None:
        if self.w_e <= 0:
            raise ValueError("ego width w_e must be positive")
        if self.d0 <= 0 or self.alpha <= 0:
            raise ValueError("d0 and alpha must be positive")


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


def logistic(u: float) -> float:
    """Numerically stable logistic function 1 / (1 + exp(-u))."""
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def lateral_offset_at_zero(obs: ObstacleEdgeObservation) -> tuple:
    """Mean and variance of the lateral offset once the edge plane is reached.

    Mean is ``y_bar + x_bar*tan(psi_bar)``; the variance propagates the
    heading and longitudinal noise linearly, which assumes a small relative
    heading (a warning is emitted above ``SMALL_ANGLE_LIMIT``).
    """
    if abs(obs.psi_bar) > SMALL_ANGLE_LIMIT:
        warnings.warn(
            f"relative heading {obs.psi_bar:.3f} rad exceeds the small-angle "
            f"range; variance propagation degrades",
            stacklevel=2,
        )
    mean = obs.y_bar + obs.x_bar * math.tan(obs.psi_bar)
    variance = obs.var_y + obs.var_psi * (obs.x_bar**2 + obs.var_x)
    return mean, variance


def collision_probability(
    obs: ObstacleEdgeObservation, params: CollisionParams
) -> float:
    """Probability that the projected lateral offset falls inside the
    combined half-width band ``|offset| < (w_e + w_t)/2``."""
    mean, variance = lateral_offset_at_zero(obs)
    variance += 0.25 * obs.var_wt  # edge-length noise widens the band
    h = 0.5 * (params.w_e + obs.w_t)
    if variance <= 0.0:
        return 1.0 if abs(mean) < h else 0.0
    sigma = math.sqrt(variance)
    return _norm_cdf((h - mean) / sigma) - _norm_cdf((-h - mean) / sigma)


def braking_deceleration(v: float, obs: ObstacleEdgeObservation) -> float:
    """Constant deceleration required to stop before the edge plane."""
    if obs.x_bar <= 0:
        raise ValueError("x_bar must be positive: obstacle edge already reached")
    closing = v * math.cos(obs.psi_bar)
    return closing**2 / (2.0 * obs.x_bar)


def smoothed_collision_probability(
    v: float, obs: ObstacleEdgeObservation, params: CollisionParams
) -> float:
    """Collision probability attenuated by braking opportunity.

    The geometric probability is scaled by ``logistic(alpha*(d - d0))`` where
    ``d`` is the deceleration needed to stop short of the edge: a threat the
    ego can trivially brake for is discounted toward zero, one requiring
    deceleration beyond ``d0`` keeps most of its probability.
    """
    p = collision_probability(obs, params)
    d = braking_deceleration(v, obs)
    return p * logistic(params.alpha * (d - params.d0))
