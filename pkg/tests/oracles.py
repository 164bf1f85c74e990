"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools

import numpy as np


def brute_force_qp(u0, a, B, lb, ub, W, weights=None):
    """Exact minimiser of the softened QP by enumerating every working set.

    For each choice of active rows (slack free, row tight) and box states
    (free / at lower / at upper), solve the equality-constrained problem and
    keep the cheapest candidate that is feasible for the original problem.
    Inactive rows carry zero slack, which holds at the optimum.
    """
    u0, a = np.asarray(u0, float), np.asarray(a, float)
    B = np.asarray(B, float).reshape(len(a), len(u0))
    lb, ub = np.asarray(lb, float), np.asarray(ub, float)
    n, m = len(u0), len(a)
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    best, best_obj = None, np.inf
    for rows in itertools.product([False, True], repeat=m):
        R = np.flatnonzero(rows)
        for bnd in itertools.product([-1, 0, 1], repeat=n):
            bnd = np.array(bnd)
            fixed = np.where(bnd == -1, lb, np.where(bnd == 1, ub, np.nan))
            F = np.flatnonzero(bnd == 0)
            nf, nr = len(F), len(R)
            # variables (u_F, s_R, lambda_R)
            K = np.zeros((nf + 2 * nr, nf + 2 * nr))
            rhs = np.zeros(nf + 2 * nr)
            K[:nf, :nf] = np.diag(2 * w[F])
            rhs[:nf] = 2 * w[F] * u0[F]
            K[nf:nf + nr, nf:nf + nr] = 2 * W * np.eye(nr)
            if nr:
                K[:nf, nf + nr:] = -B[np.ix_(R, F)].T
                K[nf:nf + nr, nf + nr:] = -np.eye(nr)
                K[nf + nr:, :nf] = B[np.ix_(R, F)]
                K[nf + nr:, nf:nf + nr] = np.eye(nr)
                fixed_part = B[np.ix_(R, np.flatnonzero(bnd != 0))] @ fixed[bnd != 0]
                rhs[nf + nr:] = -a[R] - fixed_part
            try:
                z = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            u = fixed.copy()
            u[F] = z[:nf]
            s = np.zeros(m)
            s[R] = z[nf:nf + nr]
            if np.any(u < lb - 1e-9) or np.any(u > ub + 1e-9):
                continue
            if np.any(a + B @ u + s < -1e-9):
                continue
            obj = np.sum(w * (u - u0) ** 2) + W * np.sum(s * s)
            if obj < best_obj - 1e-15:
                best, best_obj = (u, s), obj
    return best[0], best[1], best_obj


def _field(x, u, wheelbase):
    X, Y, th, v = x
    return np.array([v * np.cos(th), v * np.sin(th), v * u[0] / wheelbase, u[1]])


def _rk4(x, u, wheelbase, h):
    k1 = _field(x, u, wheelbase)
    k2 = _field(x + 0.5 * h * k1, u, wheelbase)
    k3 = _field(x + 0.5 * h * k2, u, wheelbase)
    k4 = _field(x + h * k3, u, wheelbase)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _ellipse_h(si, sj, r, alpha):
    rho = r * np.sqrt(alpha ** 2 - 1.0)
    phi = np.array([np.cos(si[2]), np.sin(si[2])])
    d = si[:2] - sj[:2]
    return np.linalg.norm(d + rho * phi) + np.linalg.norm(d - rho * phi) - 2 * alpha * r


def _fd_psi_once(si, sj, ui, uj, r, alpha, l0, l1, wheelbase, step):
    hs = []
    for k in (-2, -1, 0, 1, 2):
        a, b = np.asarray(si, float), np.asarray(sj, float)
        for _ in range(abs(k)):
            a = _rk4(a, ui, wheelbase, np.sign(k) * step)
            b = _rk4(b, uj, wheelbase, np.sign(k) * step)
        hs.append(_ellipse_h(a, b, r, alpha))
    hm2, hm1, h0, hp1, hp2 = hs
    d1 = (-hp2 + 8 * hp1 - 8 * hm1 + hm2) / (12 * step)
    d2 = (-hp2 + 16 * hp1 - 30 * h0 + 16 * hm1 - hm2) / (12 * step ** 2)
    return d2 + l1 * d1 + l0 * h0


def fd_psi(si, sj, ui, uj, r, alpha, l0, l1, wheelbase=3.0, step=1e-3):
    """``h'' + l1 h' + l0 h`` from five simulated points at ``t + k * step``,
    ``k = -2..2``, with the inputs held constant.  The fourth-order stencil is
    evaluated at ``step`` and ``step / 2`` and Richardson-extrapolated, which
    keeps the oracle accurate next to the ellipse foci where h bends sharply."""
    coarse = _fd_psi_once(si, sj, ui, uj, r, alpha, l0, l1, wheelbase, step)
    fine = _fd_psi_once(si, sj, ui, uj, r, alpha, l0, l1, wheelbase, step / 2)
    return (16 * fine - coarse) / 15


def fd_psi_gradient(si, sj, ui, uj, r, alpha, l0, l1, wheelbase=3.0, du=1e-2):
    """Central differences of :func:`fd_psi` in ``(delta_i, ac_i, delta_j, ac_j)``.
    The composition is quadratic in the inputs, so a wide stencil is exact."""
    u = np.concatenate([ui, uj]).astype(float)
    grad = np.empty(4)
    for k in range(4):
        e = np.zeros(4)
        e[k] = du
        up, um = u + e, u - e
        grad[k] = (fd_psi(si, sj, up[:2], up[2:], r, alpha, l0, l1, wheelbase)
                   - fd_psi(si, sj, um[:2], um[2:], r, alpha, l0, l1, wheelbase)) / (2 * du)
    return grad


def exact_arc(x, y, theta, v, delta, wheelbase, t):
    """Closed-form constant-speed, constant-steer motion."""
    w = v * delta / wheelbase
    half = 0.5 * w * t
    # chord length times the mid-arc heading; no cancellation as w -> 0
    chord = v * t * np.sinc(half / np.pi)
    mid = theta + half
    return x + chord * np.cos(mid), y + chord * np.sin(mid), theta + w * t
