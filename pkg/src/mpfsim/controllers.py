"""Baseline pure-pursuit control and the no-MPF / full-MPF / split-MPF
safety filters.

Decision vectors are flat ``2N`` arrays ordered ``(delta_0, ac_0, delta_1,
ac_1, ...)``.  A split-MPF bank holds one ``2N`` filter vector per
(agent, actuator) sub-controller, indexed ``2 * agent + actuator``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .barrier import RowSet
from .dynamics import THETA, V, X, Y, ControlInput, VehicleParams, VehicleState

log = logging.getLogger(__name__)


class ControllerKind(str, enum.Enum):
    NO_MPF = "no-mpf"
    FULL_MPF = "full-mpf"
    SPLIT_MPF = "split-mpf"


@dataclass
class BaselineParams:
    v_des: np.ndarray
    lat_target: np.ndarray
    lookahead_gain: float = 1.2
    min_lookahead: float = 1.0
    kp_speed: float = 0.5

    def __post_init__(self):
        self.v_des = np.atleast_1d(np.asarray(self.v_des, dtype=float))
        self.lat_target = np.atleast_1d(np.asarray(self.lat_target, dtype=float))
        if self.min_lookahead < 1.0:
            raise ValueError("lookahead floor must be at least 1 m")


def baseline_array(states: np.ndarray, b: BaselineParams, p: VehicleParams) -> np.ndarray:
    """Pure pursuit toward a point one lookahead ahead on the target lane
    centre, plus a proportional speed loop; saturated, shape ``(N, 2)``."""
    states = np.asarray(states, dtype=float)
    th, v = states[:, THETA], states[:, V]
    look = np.maximum(b.lookahead_gain * v, b.min_lookahead)
    dy = b.lat_target - states[:, Y]
    c, s = np.cos(th), np.sin(th)
    lx = c * look + s * dy
    ly = -s * look + c * dy
    kappa = 2.0 * ly / (lx * lx + ly * ly)
    u = np.column_stack([p.wheelbase * kappa, b.kp_speed * (b.v_des - v)])
    return np.clip(u, p.lower, p.upper)


def baseline(s: VehicleState, b: BaselineParams, p: VehicleParams, i: int = 0) -> ControlInput:
    one = BaselineParams(b.v_des[i:i + 1], b.lat_target[i:i + 1], b.lookahead_gain,
                         b.min_lookahead, b.kp_speed)
    return ControlInput.from_array(baseline_array(s.as_array()[None], one, p)[0])


@dataclass
class WFilterBank:
    """Fast filters ``eps w' = -w + (u_act - u*)`` on the actuation deficit.

    ``w`` is ``(2N,)`` for full-MPF and ``(2N, 2N)`` for split-MPF, where row
    ``r`` belongs to sub-controller ``r`` and ``w[r, r]`` stays pinned at 0.
    """

    eps: float
    w: np.ndarray

    @classmethod
    def full(cls, n_agents: int, eps: float) -> "WFilterBank":
        return cls(eps, np.zeros(2 * n_agents))

    @classmethod
    def split(cls, n_agents: int, eps: float) -> "WFilterBank":
        return cls(eps, np.zeros((2 * n_agents, 2 * n_agents)))

    @property
    def is_split(self) -> bool:
        return self.w.ndim == 2

    def advanced(self, u_act: np.ndarray, u_star_local: np.ndarray, dt: float) -> "WFilterBank":
        """Exact zero-order-hold update over one controller period.  For a
        split bank ``u_star_local`` holds each sub-controller's own copies."""
        phi = math.exp(-dt / self.eps)
        w = phi * self.w + (1.0 - phi) * (np.asarray(u_act, dtype=float) - u_star_local)
        if self.is_split:
            np.fill_diagonal(w, 0.0)
        return WFilterBank(self.eps, w)


@dataclass
class QpSettings:
    slack_weight: float = qp.SLACK_WEIGHT
    tol: float = qp.TOL
    max_iter: int = qp.MAX_ITER
    steer_weight: float = 1.0
    accel_weight: float = 1.0

    def weights(self, n_agents: int) -> np.ndarray:
        return np.tile([self.steer_weight, self.accel_weight], n_agents)


def _solve(u0, a, B, p: VehicleParams, settings: QpSettings, warm=None) -> qp.QpSolution:
    n = u0.size // 2
    prob = qp.QpProblem(u0, a, B, np.tile(p.lower, n), np.tile(p.upper, n),
                        settings.slack_weight, settings.weights(n))
    return qp.solve(prob, settings.tol, settings.max_iter, warm_start=warm)


def _fallback(sol: qp.QpSolution, previous, u0, p: VehicleParams) -> np.ndarray:
    if sol.optimal:
        return sol.u_star
    log.warning("safety-filter QP not solved (%s); reusing previous control", sol.status)
    if previous is not None:
        return np.asarray(previous, dtype=float).copy()
    return np.clip(u0, np.tile(p.lower, u0.size // 2), np.tile(p.upper, u0.size // 2))


def control_step_no_mpf(u0, rows: RowSet, p: VehicleParams, settings: QpSettings | None = None,
                        u_prev=None, warm=None):
    """One centralised QP with ``w = 0``.  Returns ``(u*, solution)``."""
    settings = settings or QpSettings()
    u0 = np.asarray(u0, dtype=float).ravel()
    sol = _solve(u0, rows.a, rows.B, p, settings, warm)
    return _fallback(sol, u_prev, u0, p), sol


def control_step_full_mpf(u0, rows: RowSet, bank: WFilterBank, u_act_prev, u_star_prev, dt: float,
                          p: VehicleParams, settings: QpSettings | None = None, warm=None):
    """Advance the shared filter bank with the last period's deficit, then solve
    the QP with ``w`` added to every input inside every row.

    Pass ``u_act_prev=None`` on the first step to leave the bank untouched.
    Returns ``(u*, bank, solution)``.
    """
    settings = settings or QpSettings()
    u0 = np.asarray(u0, dtype=float).ravel()
    if u_act_prev is not None:
        bank = bank.advanced(np.ravel(u_act_prev), np.ravel(u_star_prev), dt)
    sol = _solve(u0, rows.a + rows.B @ bank.w, rows.B, p, settings, warm)
    return _fallback(sol, u_star_prev, u0, p), bank, sol


def control_step_split_mpf(u0, rows: RowSet, bank: WFilterBank, u_act_prev, local_prev, dt: float,
                           p: VehicleParams, settings: QpSettings | None = None, warm=None):
    """One QP per (agent, actuator) sub-controller, each with its own filter
    vector; the implemented input ``r`` is entry ``r`` of sub-controller ``r``.

    ``local_prev`` is the ``(2N, 2N)`` array of last period's local solutions.
    Sub-controllers whose filter vectors coincide share a single solve.
    Returns ``(u*, bank, local copies, solutions)``.
    """
    settings = settings or QpSettings()
    u0 = np.asarray(u0, dtype=float).ravel()
    m = u0.size
    if u_act_prev is not None:
        bank = bank.advanced(np.ravel(u_act_prev), local_prev, dt)
    local = np.empty((m, m))
    sols: list[qp.QpSolution] = []
    cache: dict[bytes, tuple[np.ndarray, qp.QpSolution]] = {}
    for r in range(m):
        key = bank.w[r].tobytes()
        if key not in cache:
            ws = warm[r] if warm is not None else None
            sol = _solve(u0, rows.a + rows.B @ bank.w[r], rows.B, p, settings, ws)
            prev = None if local_prev is None else local_prev[r]
            cache[key] = (_fallback(sol, prev, u0, p), sol)
        local[r], sol = cache[key]
        sols.append(sol)
    return np.diag(local).copy(), bank, local, sols


class SafetyFilter:
    """Stateful driver for one controller architecture over a run."""

    def __init__(self, kind: ControllerKind | str, n_agents: int, p: VehicleParams,
                 eps: float = 0.2, dt: float = 0.1, settings: QpSettings | None = None,
                 warm_start: bool = True):
        self.kind = ControllerKind(kind)
        self.n_agents = n_agents
        self.params = p
        self.eps = eps
        self.dt = dt
        self.settings = settings or QpSettings()
        self.warm_start = warm_start
        self.reset()

    def reset(self):
        n = self.n_agents
        if self.kind is ControllerKind.SPLIT_MPF:
            self.bank = WFilterBank.split(n, self.eps)
        else:
            self.bank = WFilterBank.full(n, self.eps)
        self.u_star_prev = None
        self.local_prev = None
        self.last_solutions = None
        self.fallbacks = 0

    def step(self, u0: np.ndarray, rows: RowSet, u_act_meas: np.ndarray | None) -> np.ndarray:
        """Return the implemented ``(N, 2)`` control for this period.

        ``u_act_meas`` is the measured actual control over the previous period
        (``None`` on the first call).
        """
        u0 = np.asarray(u0, dtype=float).ravel()
        warm = self._warm(rows)
        if self.kind is ControllerKind.NO_MPF:
            u, sol = control_step_no_mpf(u0, rows, self.params, self.settings, self.u_star_prev, warm)
            sols = [sol]
        elif self.kind is ControllerKind.FULL_MPF:
            u, self.bank, sol = control_step_full_mpf(
                u0, rows, self.bank, None if self.u_star_prev is None else u_act_meas,
                self.u_star_prev, self.dt, self.params, self.settings, warm)
            sols = [sol]
        else:
            u, self.bank, self.local_prev, sols = control_step_split_mpf(
                u0, rows, self.bank, None if self.u_star_prev is None else u_act_meas,
                self.local_prev, self.dt, self.params, self.settings, warm)
        self.fallbacks += sum(not s.optimal for s in sols)
        self.last_solutions = (sols, list(rows.tags))
        self.u_star_prev = u.copy()
        return u.reshape(-1, 2)

    def _warm(self, rows: RowSet):
        """Map last period's working sets onto this period's rows by tag."""
        if not self.warm_start or self.last_solutions is None:
            return None
        sols, old_tags = self.last_solutions
        index = {tag: k for k, tag in enumerate(old_tags)}
        pos = np.array([index.get(tag, -1) for tag in rows.tags], dtype=int)
        hit = pos >= 0

        def remap(sol):
            act = np.zeros(rows.n_rows, dtype=bool)
            act[hit] = sol.active_rows[pos[hit]]
            return act, sol.bound_state

        if self.kind is ControllerKind.SPLIT_MPF:
            return [remap(s) for s in sols]
        return remap(sols[0])

    def active_tags(self) -> list:
        """Tags of rows in the final working set of the (first) solve."""
        if self.last_solutions is None:
            return []
        sols, tags = self.last_solutions
        return [tags[k] for k in np.flatnonzero(sols[0].active_rows)]
