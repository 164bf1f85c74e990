"""Kinematic bicycle model and fixed-step integration.

Multi-agent state is carried as an ``(N, 4)`` array with columns
``x, y, theta, v`` and controls as an ``(N, 2)`` array with columns
``delta, ac``.  The dataclasses below are the single-agent view of the same
quantities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

X, Y, THETA, V = range(4)
STEER, ACCEL = range(2)

STEER_LIMIT = math.pi / 7
ACCEL_MIN = -8.0
ACCEL_MAX = 4.0
SUBSTEP = 0.01


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        x, y, theta, v = (float(c) for c in arr)
        return cls(x, y, theta, v)


@dataclass(frozen=True)
class ControlInput:
    delta: float = 0.0
    ac: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.ac], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ControlInput":
        return cls(float(arr[0]), float(arr[1]))


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 3.0
    u_min: ControlInput = field(default_factory=lambda: ControlInput(-STEER_LIMIT, ACCEL_MIN))
    u_max: ControlInput = field(default_factory=lambda: ControlInput(STEER_LIMIT, ACCEL_MAX))

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError(f"wheelbase must be positive, got {self.wheelbase}")
        if not (self.u_min.delta < self.u_max.delta and self.u_min.ac < self.u_max.ac):
            raise ValueError("u_min must be strictly below u_max in every channel")

    @property
    def lower(self) -> np.ndarray:
        return self.u_min.as_array()

    @property
    def upper(self) -> np.ndarray:
        return self.u_max.as_array()


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return wrapped if wrapped.ndim else float(wrapped)


def saturate(u, params: VehicleParams):
    """Clip controls into the box limits.  Accepts a ControlInput or an array
    whose last axis is ``(delta, ac)``."""
    if isinstance(u, ControlInput):
        return ControlInput.from_array(np.clip(u.as_array(), params.lower, params.upper))
    return np.clip(np.asarray(u, dtype=float), params.lower, params.upper)


def derivatives(states: np.ndarray, controls: np.ndarray, wheelbase: float) -> np.ndarray:
    """Vectorised right-hand side for ``(N, 4)`` states and ``(N, 2)`` controls."""
    theta = states[..., THETA]
    v = states[..., V]
    out = np.empty_like(states)
    out[..., X] = v * np.cos(theta)
    out[..., Y] = v * np.sin(theta)
    out[..., THETA] = v * controls[..., STEER] / wheelbase
    out[..., V] = controls[..., ACCEL]
    return out


def derivative(s: VehicleState, u: ControlInput, p: VehicleParams) -> tuple[float, float, float, float]:
    d = derivatives(s.as_array(), u.as_array(), p.wheelbase)
    return tuple(float(c) for c in d)


def rk4(states: np.ndarray, controls: np.ndarray, wheelbase: float, dt: float) -> np.ndarray:
    """One raw RK4 step with the controls held constant (no clamping or wrapping)."""
    k1 = derivatives(states, controls, wheelbase)
    k2 = derivatives(states + 0.5 * dt * k1, controls, wheelbase)
    k3 = derivatives(states + 0.5 * dt * k2, controls, wheelbase)
    k4 = derivatives(states + dt * k3, controls, wheelbase)
    return states + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def step_array(states: np.ndarray, controls: np.ndarray, wheelbase: float, dt: float,
               substep: float = SUBSTEP) -> np.ndarray:
    """Advance all agents by ``dt`` under zero-order-hold controls.

    The interval is split into equal RK4 sub-steps no longer than ``substep``;
    speed is clamped at zero and headings wrapped after every sub-step.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_sub = max(1, int(math.ceil(dt / substep - 1e-9)))
    h = dt / n_sub
    s = np.array(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    for _ in range(n_sub):
        v_end = s[..., V] + h * controls[..., ACCEL]
        stopping = np.atleast_1d(v_end < 0.0)
        nxt = rk4(s, controls, wheelbase, h)
        if stopping.any():
            # integrate only up to the stop time, then hold position
            flat, ctl, out = s.reshape(-1, 4), controls.reshape(-1, 2), nxt.reshape(-1, 4)
            for k in np.flatnonzero(stopping):
                t_stop = flat[k, V] / -ctl[k, ACCEL]
                out[k] = rk4(flat[k], ctl[k], wheelbase, t_stop) if t_stop > 0 else flat[k]
        s = nxt
        np.maximum(s[..., V], 0.0, out=s[..., V])
        s[..., THETA] = wrap_angle(s[..., THETA])
    return s


def step(s: VehicleState, u: ControlInput, p: VehicleParams, dt: float) -> VehicleState:
    return VehicleState.from_array(step_array(s.as_array(), u.as_array(), p.wheelbase, dt))


def states_to_array(states) -> np.ndarray:
    return np.array([s.as_array() for s in states], dtype=float).reshape(-1, 4)


def array_to_states(arr) -> list[VehicleState]:
    return [VehicleState.from_array(row) for row in np.asarray(arr)]
