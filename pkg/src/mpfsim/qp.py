"""Dense primal active-set solver for the softened safety-filter QP.

    minimise   sum_i w_i (u_i - u0_i)^2 + W * sum_k s_k^2
    subject to a_k + b_k . u + s_k >= 0      for every row k
               lb <= u <= ub

Each row carries its own slack, so the problem is always feasible and the
working-set Jacobian always has full row rank.  The slacks need no sign
constraint: at the optimum ``s_k = lambda_k / (2W) >= 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

SLACK_WEIGHT = 1e6
TOL = 1e-8
MAX_ITER = 200


class QpError(ValueError):
    pass


@dataclass
class QpProblem:
    u0: np.ndarray
    a: np.ndarray
    B: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    slack_weight: float = SLACK_WEIGHT
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float).ravel()
        n = self.u0.size
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.B = np.asarray(self.B, dtype=float).reshape(self.a.size, n)
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        self.weights = (np.ones(n) if self.weights is None
                        else np.broadcast_to(np.asarray(self.weights, dtype=float), (n,)).copy())
        if np.any(self.lb >= self.ub):
            raise QpError("box lower bounds must be strictly below upper bounds")
        if self.slack_weight <= 0:
            raise QpError("slack_weight must be positive")
        if np.any(self.weights <= 0):
            raise QpError("objective weights must be positive")

    @property
    def n(self) -> int:
        return self.u0.size

    @classmethod
    def from_rows(cls, u0, rows, lb, ub, slack_weight: float = SLACK_WEIGHT) -> "QpProblem":
        from .barrier import RowSet
        u0 = np.asarray(u0, dtype=float).ravel()
        rs = RowSet.from_rows(rows, u0.size // 2)
        return cls(u0, rs.a, rs.B, lb, ub, slack_weight)

    def objective(self, u, s) -> float:
        return float(np.sum(self.weights * (u - self.u0) ** 2) + self.slack_weight * np.sum(s * s))


@dataclass
class QpSolution:
    u_star: np.ndarray
    slacks: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    active_rows: np.ndarray
    bound_state: np.ndarray
    multipliers: np.ndarray
    history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _kkt_residual(p: QpProblem, u, s, lam, bound_state) -> float:
    g_u = 2.0 * p.weights * (u - p.u0)
    r_u = g_u - p.B.T @ lam
    # fixed variables absorb the residual through their bound multipliers
    mu = np.where(bound_state == -1, r_u, np.where(bound_state == 1, -r_u, 0.0))
    r_u = np.where(bound_state != 0, 0.0, r_u)
    r_s = 2.0 * p.slack_weight * s - lam
    g_row = p.a + p.B @ u + s
    terms = [
        np.max(np.abs(r_u), initial=0.0),
        np.max(np.abs(r_s), initial=0.0),
        np.max(np.maximum(-g_row, 0.0), initial=0.0),
        np.max(np.maximum(p.lb - u, 0.0), initial=0.0),
        np.max(np.maximum(u - p.ub, 0.0), initial=0.0),
        np.max(np.maximum(-lam, 0.0), initial=0.0),
        np.max(np.maximum(-mu, 0.0), initial=0.0),
        np.max(np.abs(lam * g_row), initial=0.0),
    ]
    scale = 1.0 + max(np.max(np.abs(g_u), initial=0.0), np.max(np.abs(lam), initial=0.0))
    return float(max(terms) / scale)


@njit(cache=True)
def _active_set(u0, a, B, lb, ub, hu, W, tol, max_iter, active, bound, history):
    n = u0.size
    m = a.size
    u = np.empty(n)
    for i in range(n):
        if bound[i] == -1:
            u[i] = lb[i]
        elif bound[i] == 1:
            u[i] = ub[i]
        else:
            u[i] = min(max(u0[i], lb[i]), ub[i])
    s = np.empty(m)
    g_row = a + B @ u
    for k in range(m):
        if active[k]:
            s[k] = -g_row[k]
        else:
            s[k] = max(-g_row[k], 0.0)
            if s[k] > 0.0:
                active[k] = True
    record = history.size > 0
    if record:
        history[0] = np.sum(0.5 * hu * (u - u0) ** 2) + W * np.sum(s * s)
    lam_full = np.zeros(m)
    status = 1
    it = 0
    while it < max_iter:
        it += 1
        R = np.flatnonzero(active)
        F = np.flatnonzero(bound == 0)
        nr, nf = R.size, F.size
        g_u = hu * (u - u0)
        p_u = np.zeros(n)
        p_s = -s.copy()
        lam = np.zeros(nr)
        if nr > 0:
            BR = np.empty((nr, nf))
            for r in range(nr):
                for c in range(nf):
                    BR[r, c] = B[R[r], F[c]]
            inv_h = 1.0 / hu[F]
            BRs = BR * inv_h
            S = BRs @ BR.T
            rhs = BRs @ g_u[F]
            for r in range(nr):
                S[r, r] += 1.0 / (2.0 * W)
                rhs[r] += s[R[r]]
            lam = np.linalg.solve(S, rhs)
            step_free = (BR.T @ lam - g_u[F]) * inv_h
            for c in range(nf):
                p_u[F[c]] = step_free[c]
            for r in range(nr):
                p_s[R[r]] = lam[r] / (2.0 * W) - s[R[r]]
        else:
            for c in range(nf):
                p_u[F[c]] = -g_u[F[c]] / hu[F[c]]

        # ratio test; rows first, then lower and upper bounds, lowest index wins ties
        alpha = 1.0
        kind = 0
        idx = -1
        cp = B @ p_u + p_s
        for k in range(m):
            if not active[k] and cp[k] < 0.0:
                room = max(a[k] + B[k] @ u + s[k], 0.0)
                ratio = room / -cp[k]
                if ratio < alpha:
                    alpha, kind, idx = ratio, 1, k
        for i in range(n):
            if bound[i] == 0 and p_u[i] < 0.0:
                ratio = max(u[i] - lb[i], 0.0) / -p_u[i]
                if ratio < alpha:
                    alpha, kind, idx = ratio, 2, i
        for i in range(n):
            if bound[i] == 0 and p_u[i] > 0.0:
                ratio = max(ub[i] - u[i], 0.0) / p_u[i]
                if ratio < alpha:
                    alpha, kind, idx = ratio, 3, i

        u += alpha * p_u
        s += alpha * p_s
        if record:
            history[it] = np.sum(0.5 * hu * (u - u0) ** 2) + W * np.sum(s * s)
        if kind == 1:
            active[idx] = True
            continue
        if kind == 2:
            bound[idx] = -1
            u[idx] = lb[idx]
            continue
        if kind == 3:
            bound[idx] = 1
            u[idx] = ub[idx]
            continue

        # full step: check multipliers of the working set
        lam_full[:] = 0.0
        for r in range(nr):
            lam_full[R[r]] = lam[r]
        resid = hu * (u - u0) - B.T @ lam_full
        scale = 1.0 + np.max(np.abs(resid)) if n > 0 else 1.0
        worst_row, worst_lam = -1, -tol * scale
        for r in range(nr):
            if lam[r] < worst_lam:
                worst_row, worst_lam = R[r], lam[r]
        worst_bnd, worst_mu = -1, -tol * scale
        for i in range(n):
            if bound[i] == -1 and resid[i] < worst_mu:
                worst_bnd, worst_mu = i, resid[i]
            elif bound[i] == 1 and -resid[i] < worst_mu:
                worst_bnd, worst_mu = i, -resid[i]
        if worst_row < 0 and worst_bnd < 0:
            status = 0
            break
        if worst_row >= 0 and (worst_bnd < 0 or worst_lam <= worst_mu):
            active[worst_row] = False
        else:
            bound[worst_bnd] = 0
    return u, s, lam_full, status, it


def solve(p: QpProblem, tol: float = TOL, max_iter: int = MAX_ITER, warm_start=None,
          record_history: bool = False) -> QpSolution:
    """Solve ``p`` by the primal active-set method.

    Starts from ``clip(u0)`` with the slack of every violated row active, or
    from the working set of ``warm_start`` (a previous :class:`QpSolution` or
    a pair ``(active_rows, bound_state)`` of matching shape).  Entering and
    leaving constraints are chosen with lowest-index tie-breaking, rows before
    bounds.  The objective never increases between iterations.
    """
    n, m = p.n, p.a.size
    bound = np.where(p.u0 < p.lb, -1, np.where(p.u0 > p.ub, 1, 0)).astype(np.int8)
    active = np.zeros(m, dtype=np.bool_)
    if warm_start is not None:
        w_rows, w_bounds = ((warm_start.active_rows, warm_start.bound_state)
                            if isinstance(warm_start, QpSolution) else warm_start)
        if len(w_rows) == m and len(w_bounds) == n:
            bound = np.array(w_bounds, dtype=np.int8)
            active = np.array(w_rows, dtype=np.bool_)
    history = np.full(max_iter + 1 if record_history else 0, np.nan)
    u, s, lam, code, it = _active_set(
        p.u0, p.a, np.ascontiguousarray(p.B), p.lb, p.ub, 2.0 * p.weights,
        float(p.slack_weight), float(tol), int(max_iter), active, bound, history)
    status = "optimal" if code == 0 else "max_iter"
    u = np.clip(u, p.lb, p.ub)
    res = _kkt_residual(p, u, s, lam, bound)
    if status != "optimal":
        log.warning("QP hit max_iter=%d (kkt residual %.3g)", max_iter, res)
    hist = [float(h) for h in history[:it + 1]] if record_history else []
    return QpSolution(u, np.maximum(s, 0.0), status, res, it, active, bound, lam, hist)


_warm = False


def warmup():
    """Compile (or load from cache) the solver kernel outside timed loops."""
    global _warm
    if not _warm:
        solve(QpProblem([0.0, 0.0], [-1.0], [[1.0, 0.0]], -1.0, 1.0))
        _warm = True


def explicit_single_constraint(u0, a: float, b, w=None) -> np.ndarray:
    """Closed-form minimiser of ``||u - u0||^2`` subject to
    ``a + b.(u + w) >= 0`` with no box limits."""
    u0 = np.asarray(u0, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    w = np.zeros_like(u0) if w is None else np.asarray(w, dtype=float).ravel()
    g = a + b @ u0 + b @ w
    if g >= 0:
        return u0.copy()
    bb = b @ b
    if bb == 0.0:
        raise QpError("constraint violated with b = 0: no input can restore it")
    return u0 - g / bb * b
