"""Discrete kinematic bicycle model with state and input bounds.

The state is (x, y, theta, v, delta) referenced to the center of the rear
axle; inputs are (a, omega) = (longitudinal acceleration, steering rate).
Integration is forward Euler with a fixed step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

STATE_NAMES = ("x", "y", "theta", "v", "delta")
INPUT_NAMES = ("a", "omega")


@dataclass
class EgoState:
    """Planar vehicle state, rear-axle reference point."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v, self.delta], dtype=float)

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "EgoState":
        x, y, theta, v, delta = (float(c) for c in arr)
        return cls(x, y, theta, v, delta)


@dataclass
class EgoInput:
    """Control input: acceleration and steering rate."""

    a: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.omega], dtype=float)

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "EgoInput":
        a, omega = (float(c) for c in arr)
        return cls(a, omega)


@dataclass
class VehicleParams:
    """Geometry of the ego vehicle."""

    wheelbase: float = 2.8
    width: float = 1.9
    length: float = 4.5
    rear_overhang: float = 0.9  # rear axle to rear bumper

    def __post_init__(self) -> None:
        for name in ("wheelbase", "width", "length", "rear_overhang"):
            if getattr(self, name) <= 0 and name != "rear_overhang":
                raise ValueError(f"{name} must be positive")
        if self.rear_overhang < 0 or self.rear_overhang > self.length:
            raise ValueError("rear_overhang must lie within the vehicle length")

    @property
    def center_offset(self) -> float:
        """Distance from the rear axle to the bounding-box center."""
        return 0.5 * self.length - self.rear_overhang


@dataclass
class Bounds:
    """Box bounds on state and input vectors (component-wise)."""

    state_lower: np.ndarray
    state_upper: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray

    def __post_init__(self) -> None:
        self.state_lower = np.asarray(self.state_lower, dtype=float)
        self.state_upper = np.asarray(self.state_upper, dtype=float)
        self.input_lower = np.asarray(self.input_lower, dtype=float)
        self.input_upper = np.asarray(self.input_upper, dtype=float)
        if self.state_lower.shape != (5,) or self.state_upper.shape != (5,):
            raise ValueError("state bounds must have 5 components")
        if self.input_lower.shape != (2,) or self.input_upper.shape != (2,):
            raise ValueError("input bounds must have 2 components")
        if np.any(self.state_lower > self.state_upper) or np.any(
            self.input_lower > self.input_upper
        ):
            raise ValueError("lower bounds must not exceed upper bounds")


def default_bounds() -> Bounds:
    """Operating envelope: v in [-2, 10] m/s, delta in [-0.1, 0.1] rad,
    a in [-4, 2] m/s^2, omega in [-1.5, 1.5] rad/s."""
    inf = math.inf
    return Bounds(
        state_lower=np.array([-inf, -inf, -inf, -2.0, -0.1]),
        state_upper=np.array([inf, inf, inf, 10.0, 0.1]),
        input_lower=np.array([-4.0, -1.5]),
        input_upper=np.array([2.0, 1.5]),
    )


def step_raw(
    x: float,
    y: float,
    theta: float,
    v: float,
    delta: float,
    a: float,
    omega: float,
    wheelbase: float,
    t_s: float,
) -> tuple:
    """One forward-Euler step of the bicycle model on plain floats."""
    return (
        x + t_s * v * math.cos(theta),
        y + t_s * v * math.sin(theta),
        theta + t_s * (v / wheelbase) * math.tan(delta),
        v + t_s * a,
        delta + t_s * omega,
    )


def step(state: EgoState, inp: EgoInput, params: VehicleParams, t_s: float) -> EgoState:
    """Propagate the state by one step of duration t_s."""
    if t_s <= 0:
        raise ValueError("t_s must be positive")
    return EgoState(
        *step_raw(
            state.x,
            state.y,
            state.theta,
            state.v,
            state.delta,
            inp.a,
            inp.omega,
            params.wheelbase,
            t_s,
        )
    )


def rollout(
    initial: EgoState,
    inputs: Iterable[EgoInput],
    params: VehicleParams,
    t_s: float,
) -> list:
    """Roll the model forward under an input sequence.

    Returns N+1 states, the first being the initial state.
    """
    states = [initial]
    current = initial
    for inp in inputs:
        current = step(current, inp, params, t_s)
        states.append(current)
    return states


@dataclass(frozen=True)
class BoundViolation:
    """One component outside its bounds."""

    component: str
    value: float
    lower: float
    upper: float

    def __str__(self) -> str:
        return (
            f"{self.component}={self.value:.6g} outside "
            f"[{self.lower:.6g}, {self.upper:.6g}]"
        )


def check_bounds(
    value: Union[EgoState, EgoInput], bounds: Bounds
) -> list:
    """List every component of a state or input lying outside its bounds."""
    if isinstance(value, EgoState):
        arr, lower, upper, names = (
            value.as_array(),
            bounds.state_lower,
            bounds.state_upper,
            STATE_NAMES,
        )
    elif isinstance(value, EgoInput):
        arr, lower, upper, names = (
            value.as_array(),
            bounds.input_lower,
            bounds.input_upper,
            INPUT_NAMES,
        )
    else:
        raise TypeError("value must be an EgoState or EgoInput")
    violations = []
    for i, name in enumerate(names):
        if arr[i] < lower[i] or arr[i] > upper[i]:
            violations.append(
                BoundViolation(name, float(arr[i]), float(lower[i]), float(upper[i]))
            )
    return violations
