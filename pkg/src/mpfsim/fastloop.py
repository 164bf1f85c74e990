"""Scalar delay-differential models of the fast correction loop.

Full-MPF:   eps * eta' = -k * eta(t - tau) + c
Split-MPF:  eps * eta' = -k * (eta + eta(t - tau)) + c

With ``k = 1`` the full-MPF loop loses stability at ``tau / eps = pi / 2``;
the split-MPF loop with ``0 < k`` stays stable for every delay.  Both are
integrated with classical RK4 at ``dt = eps / 100``, reading delayed values
from the stored trajectory by linear interpolation (history is zero for
``t < 0`` and ``eta(0) = 1``).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

DIVERGENCE_THRESHOLD = 1e6
STEPS_PER_EPS = 100


class Mode(str, enum.Enum):
    FULL_MPF = "full-mpf"
    SPLIT_MPF = "split-mpf"


class Verdict(str, enum.Enum):
    CONVERGED = "converged"
    OSCILLATORY_DECAY = "oscillatory_decay"
    DIVERGED = "diverged"


class NoBoundaryError(RuntimeError):
    """Raised when the verdict does not change across the search bracket."""


@dataclass(frozen=True)
class ScalarDde:
    eps: float
    delay: float
    gain: float = 1.0
    forcing: float = 0.0
    mode: Mode = Mode.FULL_MPF
    dt: float | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.dt is None:
            object.__setattr__(self, "dt", self.eps / STEPS_PER_EPS)
        if self.dt > self.eps / 50:
            raise ValueError("dt must not exceed eps / 50")

    @property
    def history_length(self) -> int:
        return math.ceil(self.delay / self.dt)

    def default_horizon(self) -> float:
        # the delayed term must act for several round trips before judging
        return 100.0 * self.eps + 10.0 * self.delay


@dataclass
class StabilityReport:
    delay_over_eps: float
    verdict: Verdict
    decay_rate: float
    max_abs: float
    t: np.ndarray | None = None
    eta: np.ndarray | None = None


@njit(cache=True)
def _delayed(eta, t, dt, n_stored, stage_t, stage_val, t_now, eta_now):
    # value of eta at time t; linear between stored samples, or between the
    # current sample and the RK stage value when the delay is shorter than dt
    if t < 0.0:
        return 0.0
    pos = t / dt
    k = int(math.floor(pos))
    if k + 1 < n_stored:
        f = pos - k
        return eta[k] * (1.0 - f) + eta[k + 1] * f
    if stage_t <= t_now:
        return eta_now
    f = (t - t_now) / (stage_t - t_now)
    if f < 0.0:
        f = 0.0
    return eta_now * (1.0 - f) + stage_val * f


@njit(cache=True)
def _integrate(eps, tau, k, c, split, dt, n_steps, threshold):
    eta = np.zeros(n_steps + 1)
    eta[0] = 1.0
    last = n_steps
    for n in range(n_steps):
        t = n * dt
        y = eta[n]
        stored = n + 1
        cs = (0.0, 0.5, 0.5, 1.0)
        ks = np.zeros(4)
        for s in range(4):
            if s == 0:
                ys = y
            else:
                ys = y + cs[s] * dt * ks[s - 1]
            ts = t + cs[s] * dt
            d = ys if tau == 0.0 else _delayed(eta, ts - tau, dt, stored, ts, ys, t, y)
            if split:
                ks[s] = (-k * (ys + d) + c) / eps
            else:
                ks[s] = (-k * d + c) / eps
        eta[n + 1] = y + dt * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]) / 6.0
        if abs(eta[n + 1]) > threshold or not math.isfinite(eta[n + 1]):
            last = n + 1
            break
    return eta[:last + 1]


def _envelope_rate(t: np.ndarray, eta: np.ndarray, forcing_level: float) -> float:
    """Exponential growth rate (1/s) of ``|eta - level|`` over the second half
    of the trajectory, fitted to its local peaks when it oscillates."""
    dev = np.abs(eta - forcing_level)
    half = len(t) // 2
    tt, yy = t[half:], dev[half:]
    peaks = np.flatnonzero((yy[1:-1] > yy[:-2]) & (yy[1:-1] >= yy[2:])) + 1
    if len(peaks) >= 3:
        tt, yy = tt[peaks], yy[peaks]
    keep = yy > 1e-280
    if keep.sum() < 2:
        return -math.inf
    slope = np.polyfit(tt[keep], np.log(yy[keep]), 1)[0]
    return float(slope)


def simulate_dde(m: ScalarDde, horizon: float | None = None, keep_trajectory: bool = False) -> StabilityReport:
    """Integrate ``m`` from unit initial value and classify the response.

    Diverged: the trajectory crosses the 1e6 threshold or its envelope grows.
    Oscillatory decay: bounded and decaying, but undershoots the equilibrium.
    ``decay_rate`` is minus the fitted envelope growth rate.
    """
    horizon = m.default_horizon() if horizon is None else horizon
    n_steps = int(math.ceil(horizon / m.dt))
    eta = _integrate(m.eps, m.delay, m.gain, m.forcing, m.mode is Mode.SPLIT_MPF, m.dt,
                     n_steps, DIVERGENCE_THRESHOLD)
    t = np.arange(len(eta)) * m.dt
    k_total = m.gain * (2.0 if m.mode is Mode.SPLIT_MPF else 1.0)
    level = m.forcing / k_total
    max_abs = float(np.max(np.abs(eta)))
    if len(eta) <= n_steps or not np.all(np.isfinite(eta)):
        verdict, rate = Verdict.DIVERGED, -math.inf
        g = _envelope_rate(t, eta, level)
        rate = -g if math.isfinite(g) else rate
    else:
        g = _envelope_rate(t, eta, level)
        rate = -g
        dev = eta - level
        scale = np.max(np.abs(dev))
        if g > 0:
            verdict = Verdict.DIVERGED
        elif scale > 0 and np.any(dev * np.sign(dev[0] or 1.0) < -1e-9 * scale):
            verdict = Verdict.OSCILLATORY_DECAY
        else:
            verdict = Verdict.CONVERGED
    return StabilityReport(m.delay / m.eps, verdict, rate, max_abs,
                           t if keep_trajectory else None, eta if keep_trajectory else None)


def is_stable(mode: Mode | str, k: float, eps: float, ratio: float, dt: float | None = None) -> bool:
    rep = simulate_dde(ScalarDde(eps, ratio * eps, k, 0.0, Mode(mode), dt))
    return rep.verdict is not Verdict.DIVERGED


def find_stability_boundary(mode: Mode | str = Mode.FULL_MPF, k: float = 1.0, eps: float = 0.2,
                            lo: float = 0.1, hi: float = 3.0, tol: float = 1e-3,
                            dt: float | None = None) -> float:
    """Bisect ``tau / eps`` on ``[lo, hi]`` for the stable/diverged transition.

    Raises :class:`NoBoundaryError` when both ends share a verdict.
    """
    stable_lo = is_stable(mode, k, eps, lo, dt)
    stable_hi = is_stable(mode, k, eps, hi, dt)
    if stable_lo == stable_hi:
        raise NoBoundaryError(
            f"{Mode(mode).value}, k={k}: no stability change for tau/eps in [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_stable(mode, k, eps, mid, dt) == stable_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def oscillation_onset(k: float = 1.0, eps: float = 0.2, lo: float = 0.05, hi: float = 1.5,
                      tol: float = 1e-3) -> float:
    """Smallest ``tau / eps`` at which the full-MPF loop undershoots."""
    def osc(ratio):
        v = simulate_dde(ScalarDde(eps, ratio * eps, k, 0.0, Mode.FULL_MPF)).verdict
        return v is not Verdict.CONVERGED

    if osc(lo) or not osc(hi):
        raise NoBoundaryError("oscillation onset not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if osc(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def split_gain(b) -> float:
    """Effective split-MPF loop gain ``2 b1^2 b2^2 / |b|^4`` for a two-input row."""
    b = np.asarray(b, dtype=float).ravel()
    nb = float(b @ b)
    if nb == 0.0:
        raise ValueError("b must be nonzero")
    return 2.0 * b[0] ** 2 * b[1] ** 2 / nb ** 2
