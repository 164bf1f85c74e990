"""Actuator impairment operators and a frequency-domain passivity check.

Channel operators are advanced once per simulation sub-step.  ``apply``
returns the actual control held over the coming sub-step and then advances
internal state; ``peek`` returns the output the operator would produce right
now with the last command still held, which is what on-board sensors report
at a controller instant.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Channel:
    """Identity; base class for per-channel operators."""

    name = "identity"
    is_identity = True

    def __init__(self):
        self._last = None

    def reset(self):
        self._last = None

    def _map(self, u: float, u0: float) -> float:
        return u

    def apply(self, u: float, dt: float, u0: float = 0.0) -> float:
        self._last = (u, u0)
        return self._map(u, u0)

    def peek(self) -> float:
        if self._last is None:
            raise RuntimeError("channel has not been driven yet")
        return self._map(*self._last)

    def spec(self) -> dict:
        return {"kind": self.name}


class Identity(Channel):
    pass


class Gain(Channel):
    name = "gain"

    def __init__(self, kappa: float):
        super().__init__()
        self.kappa = float(kappa)
        self.is_identity = self.kappa == 1.0

    def _map(self, u, u0):
        return u if self.is_identity else self.kappa * u

    def spec(self):
        return {"kind": self.name, "kappa": self.kappa}


class Clip(Channel):
    name = "clip"
    is_identity = False

    def __init__(self, lo: float, hi: float):
        super().__init__()
        if lo > hi:
            raise ValueError("clip bounds out of order")
        self.lo, self.hi = float(lo), float(hi)

    def _map(self, u, u0):
        return min(max(u, self.lo), self.hi)

    def spec(self):
        return {"kind": self.name, "lo": self.lo, "hi": self.hi}


class OnRails(Channel):
    """Steering follows the baseline command regardless of the filter."""

    name = "on_rails"
    is_identity = False

    def _map(self, u, u0):
        return u0


class FirstOrder(Channel):
    """``1 / (tau s + 1)`` discretised exactly under zero-order hold."""

    name = "first_order"
    is_identity = False

    def __init__(self, tau: float, init: float | None = None):
        super().__init__()
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = float(tau)
        self.init = init
        self.y = init

    def reset(self):
        super().reset()
        self.y = self.init

    def apply(self, u, dt, u0=0.0):
        if self.y is None:
            self.y = float(u)
        out = self.y
        phi = math.exp(-dt / self.tau)
        self.y = phi * self.y + (1.0 - phi) * u
        self._last = (u, u0)
        return out

    def peek(self):
        if self.y is None:
            raise RuntimeError("channel has not been driven yet")
        return self.y

    def spec(self):
        return {"kind": self.name, "tau": self.tau}


class PureDelay(Channel):
    """Sample FIFO of ``round(tau_d / dt)`` entries."""

    name = "delay"
    is_identity = False

    def __init__(self, tau_d: float, init: float | None = None):
        super().__init__()
        if tau_d < 0:
            raise ValueError("delay must be non-negative")
        self.tau_d = float(tau_d)
        self.init = init
        self.buf = None

    def reset(self):
        super().reset()
        self.buf = None

    def apply(self, u, dt, u0=0.0):
        if self.buf is None:
            k = int(round(self.tau_d / dt))
            fill = float(u) if self.init is None else self.init
            self.buf = [fill] * k
        self.buf.append(float(u))
        self._last = (u, u0)
        return self.buf.pop(0)

    def peek(self):
        if self.buf is None:
            raise RuntimeError("channel has not been driven yet")
        return self.buf[0]

    def spec(self):
        return {"kind": self.name, "tau_d": self.tau_d}


CHANNEL_KINDS = {
    "identity": lambda **kw: Identity(),
    "gain": lambda kappa: Gain(kappa),
    "clip": lambda lo, hi: Clip(lo, hi),
    "on_rails": lambda **kw: OnRails(),
    "first_order": lambda tau: FirstOrder(tau),
    "delay": lambda tau_d: PureDelay(tau_d),
}


def channel_from_spec(spec: dict) -> Channel:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in CHANNEL_KINDS:
        raise ValueError(f"unknown channel kind {kind!r}")
    return CHANNEL_KINDS[kind](**spec)


@dataclass
class Onset:
    """Impairment trigger; latches once reached."""

    time: float | None = None
    x_position: float | None = None

    def reached(self, t: float, x: float) -> bool:
        if self.time is None and self.x_position is None:
            return True
        if self.time is not None and t >= self.time:
            return True
        return self.x_position is not None and x >= self.x_position


@dataclass
class DeltaModel:
    """Per-vehicle ``diag(steer, accel)`` impairment with an onset trigger."""

    steer: Channel = field(default_factory=Identity)
    accel: Channel = field(default_factory=Identity)
    onset: Onset = field(default_factory=Onset)
    triggered: bool = False

    @property
    def is_identity(self) -> bool:
        return self.steer.is_identity and self.accel.is_identity

    def reset(self):
        self.steer.reset()
        self.accel.reset()
        self.triggered = False

    def apply(self, u_star, t: float, x: float, u0, dt: float) -> np.ndarray:
        if not self.triggered and self.onset.reached(t, x):
            self.triggered = True
        if not self.triggered:
            return np.array([u_star[0], u_star[1]], dtype=float)
        return np.array([self.steer.apply(float(u_star[0]), dt, float(u0[0])),
                         self.accel.apply(float(u_star[1]), dt, float(u0[1]))])

    def peek(self, last_applied) -> np.ndarray:
        if not self.triggered:
            return np.array(last_applied, dtype=float)
        return np.array([self.steer.peek(), self.accel.peek()])

    def spec(self) -> dict:
        return {"steer": self.steer.spec(), "accel": self.accel.spec(),
                "onset": {"time": self.onset.time, "x_position": self.onset.x_position}}

    @classmethod
    def from_spec(cls, spec: dict) -> "DeltaModel":
        onset = spec.get("onset") or {}
        return cls(channel_from_spec(spec["steer"]), channel_from_spec(spec["accel"]),
                   Onset(onset.get("time"), onset.get("x_position")))


# -- passivity ---------------------------------------------------------------

class Passivity(enum.Enum):
    NOT_PASSIVE = "not_passive"
    PASSIVE = "passive"
    ISP = "isp"


@dataclass(frozen=True)
class LtiChannel:
    """Scalar state-space channel ``z' = Az + Bu, y = Cz + Du``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)) if np.size(self.A) else np.zeros((0, 0))
        k = A.shape[0]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float).reshape(k, 1))
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float).reshape(1, k))
        object.__setattr__(self, "D", float(self.D))

    @classmethod
    def gain(cls, kappa: float) -> "LtiChannel":
        return cls(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), kappa)

    @classmethod
    def first_order(cls, tau: float, k: float = 1.0) -> "LtiChannel":
        return cls([[-1.0 / tau]], [[1.0 / tau]], [[k]], 0.0)

    def is_hurwitz(self) -> bool:
        return self.A.size == 0 or bool(np.all(np.linalg.eigvals(self.A).real < 0))

    def response(self, w) -> np.ndarray:
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if self.A.size == 0:
            return np.full(w.shape, self.D, dtype=complex)
        eye = np.eye(self.A.shape[0])
        out = np.empty(w.shape, dtype=complex)
        for k, wk in enumerate(w):
            out[k] = (self.C @ np.linalg.solve(1j * wk * eye - self.A, self.B))[0, 0] + self.D
        return out


@dataclass(frozen=True)
class DelayChannel:
    """``exp(-s tau_d)``; infinite-dimensional, so no high-frequency limit."""

    tau_d: float

    def is_hurwitz(self) -> bool:
        return True

    def response(self, w) -> np.ndarray:
        return np.exp(-1j * np.asarray(w, dtype=float) * self.tau_d)


@dataclass(frozen=True)
class PassivityReport:
    verdict: Passivity
    nu: float
    omega_at_min: float


def default_freq_grid(n: int = 400) -> np.ndarray:
    return np.logspace(-3, 4, n)


def classify_passivity(channel, freq_grid=None, tol: float = 1e-9) -> PassivityReport:
    """Estimate the input-feedforward passivity index ``inf Re{G(jw)}`` on a
    frequency grid (numerical evidence, not a certificate)."""
    if not channel.is_hurwitz():
        raise ValueError("channel state matrix is not Hurwitz")
    w = default_freq_grid() if freq_grid is None else np.asarray(freq_grid, dtype=float)
    re = channel.response(w).real
    k = int(np.argmin(re))
    nu, w_min = float(re[k]), float(w[k])
    if isinstance(channel, LtiChannel) and channel.D < nu:
        nu, w_min = channel.D, math.inf
    if nu > tol:
        verdict = Passivity.ISP
    elif nu >= -tol:
        verdict = Passivity.PASSIVE
    else:
        verdict = Passivity.NOT_PASSIVE
    return PassivityReport(verdict, nu, w_min)


def scalarized_real_part(b, channels, freq_grid=None) -> np.ndarray:
    """``Re{b diag(G_i) b^T} / |b|^2`` over the grid for a diagonal impairment."""
    w = default_freq_grid() if freq_grid is None else np.asarray(freq_grid, dtype=float)
    b = np.asarray(b, dtype=float)
    weights = b * b / (b @ b)
    return sum(wi * ch.response(w).real for wi, ch in zip(weights, channels))


def lti_from_channel(ch: Channel) -> LtiChannel:
    if isinstance(ch, Gain):
        return LtiChannel.gain(ch.kappa)
    if isinstance(ch, FirstOrder):
        return LtiChannel.first_order(ch.tau)
    if isinstance(ch, Identity) or ch.is_identity:
        return LtiChannel.gain(1.0)
    raise ValueError(f"{ch.name} channel has no finite-dimensional LTI form")

