"""Elliptic inter-agent barriers, road-boundary barriers and the affine
constraint rows obtained from ``h'' + l1 h' + l0 h >= 0``.

The ellipse barrier depends on the ego heading, so the steering input already
shows up in ``h'`` and the composed expression is quadratic in the inputs.
Rows are therefore the exact first-order expansion of
``psi(u) = h''(u) + l1 h'(u) + l0 h`` about a linearisation point (zero by
default): ``a + b.u = psi(u_lin) + grad psi(u_lin).(u - u_lin)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import THETA, V, X, Y, VehicleParams, VehicleState

SINGULAR_DIST = 1e-9


@dataclass(frozen=True)
class EllipseParams:
    r: float = 2.0
    alpha: float = 3.0
    margin: float = 0.1

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @property
    def rho(self) -> float:
        return self.r * math.sqrt(self.alpha ** 2 - 1.0)

    def inflated(self) -> "EllipseParams":
        """Controller-side ellipse: semi-minor axis scaled by ``1 + margin``."""
        return replace(self, r=self.r * (1.0 + self.margin), margin=0.0)


@dataclass(frozen=True)
class RoadGeometry:
    rb_r: float = -3.5
    rb_l: float = 3.5
    lane_width: float = 3.5
    lane_centers: tuple[float, ...] = (-1.75, 1.75)

    def __post_init__(self):
        if not self.rb_r < self.rb_l:
            raise ValueError("right boundary must lie below the left boundary")


@dataclass(frozen=True)
class CbfGains:
    lam: float = 1.0
    l0: float = 0.8
    l1: float = 2.4

    def __post_init__(self):
        if self.l0 <= 0 or self.l1 <= 0 or self.l1 ** 2 < 4 * self.l0 - 1e-12:
            raise ValueError("s^2 + l1 s + l0 must have real negative roots")

    @classmethod
    def from_roots(cls, p1: float, p2: float, lam: float = 1.0) -> "CbfGains":
        """Gains placing the roots of ``s^2 + l1 s + l0`` at ``-p1, -p2``."""
        return cls(lam=lam, l0=p1 * p2, l1=p1 + p2)


@dataclass
class ConstraintRow:
    """One affine constraint ``a + sum_i b_i . u_i >= 0``."""

    a: float
    coeffs: dict[int, tuple[float, float]] = field(default_factory=dict)
    tag: tuple = ()

    def value(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float).reshape(-1, 2)
        return self.a + sum(bd * u[i, 0] + ba * u[i, 1] for i, (bd, ba) in self.coeffs.items())


@dataclass
class RowSet:
    """Dense stacking of constraint rows over ``2N`` decision variables,
    ordered ``(delta_0, ac_0, delta_1, ac_1, ...)``."""

    a: np.ndarray
    B: np.ndarray
    tags: list

    @property
    def n_rows(self) -> int:
        return len(self.a)

    def to_rows(self) -> list[ConstraintRow]:
        rows = []
        for k, tag in enumerate(self.tags):
            agents = tag[1:3] if tag[0] == "pair" else tag[1:2]
            coeffs = {int(i): (float(self.B[k, 2 * i]), float(self.B[k, 2 * i + 1])) for i in agents}
            rows.append(ConstraintRow(float(self.a[k]), coeffs, tag))
        return rows

    @classmethod
    def from_rows(cls, rows, n_agents: int) -> "RowSet":
        a = np.array([r.a for r in rows], dtype=float)
        B = np.zeros((len(rows), 2 * n_agents))
        for k, row in enumerate(rows):
            for i, (bd, ba) in row.coeffs.items():
                B[k, 2 * i] = bd
                B[k, 2 * i + 1] = ba
        return cls(a, B, [r.tag for r in rows])


def _unit(theta):
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _perp(theta):
    return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)


def ellipse_h_array(si: np.ndarray, sj: np.ndarray, r: float, alpha: float):
    """Focal-sum barrier of agent i's ellipse against agent j's centre.
    Broadcasts over leading axes of the ``(..., 4)`` state arrays."""
    rho = r * math.sqrt(alpha ** 2 - 1.0)
    phi = _unit(si[..., THETA])
    diff = si[..., X:Y + 1] - sj[..., X:Y + 1]
    return (np.linalg.norm(diff + rho * phi, axis=-1)
            + np.linalg.norm(diff - rho * phi, axis=-1) - 2.0 * alpha * r)


def ellipse_h(si: VehicleState, sj: VehicleState, e: EllipseParams) -> float:
    return float(ellipse_h_array(si.as_array(), sj.as_array(), e.r, e.alpha))


def pairwise_h(states: np.ndarray, r: float, alpha: float) -> np.ndarray:
    """``(N, N)`` matrix of ``h_ij``; the diagonal is ``+inf``."""
    states = np.asarray(states, dtype=float)
    h = ellipse_h_array(states[:, None, :], states[None, :, :], r, alpha)
    np.fill_diagonal(h, np.inf)
    return h


def _pair_terms(si, sj, ui, uj, r, alpha, l0, l1, wheelbase):
    """psi = h'' + l1 h' + l0 h and its gradient w.r.t. (delta_i, ac_i,
    delta_j, ac_j), vectorised over the leading axis."""
    rho = r * math.sqrt(alpha ** 2 - 1.0)
    L = wheelbase
    thi, vi = si[:, THETA], si[:, V]
    thj, vj = sj[:, THETA], sj[:, V]
    di, ai = ui[:, 0], ui[:, 1]
    dj, aj = uj[:, 0], uj[:, 1]
    phi_i, perp_i = _unit(thi), _perp(thi)
    phi_j, perp_j = _unit(thj), _perp(thj)
    om_i = vi * di / L
    om_j = vj * dj / L
    alp_i = ai * di / L
    xdot_i = vi[:, None] * phi_i
    xdot_j = vj[:, None] * phi_j
    xdd_i = ai[:, None] * phi_i + (vi * om_i)[:, None] * perp_i
    xdd_j = aj[:, None] * phi_j + (vj * om_j)[:, None] * perp_j
    diff = si[:, X:Y + 1] - sj[:, X:Y + 1]

    # partials of x_i'' etc. that do not depend on the focal sign
    dxdd_ddi = ((vi * vi / L)[:, None]) * perp_i
    dxdd_ddj = -((vj * vj / L)[:, None]) * perp_j

    m = len(si)
    psi = np.full(m, -2.0 * alpha * r * l0)
    grad = np.zeros((m, 4))
    for sgn in (1.0, -1.0):
        d = diff + sgn * rho * phi_i
        dd = xdot_i + sgn * rho * om_i[:, None] * perp_i - xdot_j
        ddd = xdd_i + sgn * rho * (-(om_i ** 2)[:, None] * phi_i + alp_i[:, None] * perp_i) - xdd_j
        n = np.linalg.norm(d, axis=1)
        singular = n < SINGULAR_DIST
        safe_n = np.where(singular, 1.0, n)
        e = np.where(singular[:, None], phi_i, d / safe_n[:, None])
        curv_scale = np.where(singular, 0.0, 1.0 / safe_n)

        ndot = np.einsum("ij,ij->i", e, dd)
        ndd = curv_scale * (np.einsum("ij,ij->i", dd, dd) - ndot ** 2) + np.einsum("ij,ij->i", e, ddd)
        psi += ndd + l1 * ndot + l0 * n

        # d(dd)/d delta_i is the only nonzero velocity-level partial
        pdd = (sgn * rho * vi / L)[:, None] * perp_i
        pddd = [
            dxdd_ddi + sgn * rho * ((-2.0 * om_i * vi / L)[:, None] * phi_i + (ai / L)[:, None] * perp_i),
            phi_i + sgn * rho * (di / L)[:, None] * perp_i,
            dxdd_ddj,
            -phi_j,
        ]
        e_pdd = np.einsum("ij,ij->i", e, pdd)
        dd_pdd = np.einsum("ij,ij->i", dd, pdd)
        for k in range(4):
            g = np.einsum("ij,ij->i", e, pddd[k])
            if k == 0:
                g = g + curv_scale * (2.0 * dd_pdd - 2.0 * ndot * e_pdd) + l1 * e_pdd
            grad[:, k] += g
    return psi, grad


def pair_constraint_arrays(si, sj, ui, uj, e: EllipseParams, g: CbfGains, wheelbase: float):
    """Vectorised ``(a, b)`` for many ordered pairs; ``b`` has columns
    ``(delta_i, ac_i, delta_j, ac_j)``."""
    psi, grad = _pair_terms(si, sj, ui, uj, e.r, e.alpha, g.l0, g.l1, wheelbase)
    a = psi - np.einsum("ij,ij->i", grad, np.hstack([ui, uj]))
    return a, grad


def pair_constraint_row(si: VehicleState, sj: VehicleState, e: EllipseParams, g: CbfGains,
                        p: VehicleParams, i: int = 0, j: int = 1, u_lin=None) -> ConstraintRow:
    """Constraint row for agent j kept outside agent i's ellipse.

    ``u_lin`` is an optional ``(2, 2)`` array holding the linearisation point
    for agents i and j.
    """
    u_lin = np.zeros((2, 2)) if u_lin is None else np.asarray(u_lin, dtype=float).reshape(2, 2)
    a, b = pair_constraint_arrays(si.as_array()[None], sj.as_array()[None],
                                  u_lin[:1], u_lin[1:], e, g, p.wheelbase)
    coeffs = {i: (float(b[0, 0]), float(b[0, 1])), j: (float(b[0, 2]), float(b[0, 3]))}
    return ConstraintRow(float(a[0]), coeffs, ("pair", i, j))


def road_constraint_arrays(states: np.ndarray, road: RoadGeometry, g: CbfGains, wheelbase: float):
    """Right and left boundary rows for every agent: ``(a_r, b_r, a_l, b_l)``
    with ``b`` of shape ``(N, 2)``."""
    y, th, v = states[:, Y], states[:, THETA], states[:, V]
    s, c = np.sin(th), np.cos(th)
    a_r = g.l1 * v * s + g.l0 * (y - road.rb_r)
    b_r = np.stack([v * v * c / wheelbase, s], axis=1)
    a_l = -g.l1 * v * s + g.l0 * (road.rb_l - y)
    return a_r, b_r, a_l, -b_r


def road_constraint_rows(si: VehicleState, road: RoadGeometry, g: CbfGains, p: VehicleParams,
                         i: int = 0) -> tuple[ConstraintRow, ConstraintRow]:
    a_r, b_r, a_l, b_l = road_constraint_arrays(si.as_array()[None], road, g, p.wheelbase)
    right = ConstraintRow(float(a_r[0]), {i: (float(b_r[0, 0]), float(b_r[0, 1]))}, ("road", i, "right"))
    left = ConstraintRow(float(a_l[0]), {i: (float(b_l[0, 0]), float(b_l[0, 1]))}, ("road", i, "left"))
    return right, left


def active_pairs(states: np.ndarray, window: float = 50.0) -> tuple[np.ndarray, np.ndarray]:
    """Ordered pairs ``(i, j)``, ``i != j``, within ``window`` metres longitudinally."""
    x = states[:, X]
    close = np.abs(x[:, None] - x[None, :]) <= window
    np.fill_diagonal(close, False)
    return np.nonzero(close)


def assemble_rows(states: np.ndarray, e: EllipseParams, road: RoadGeometry, g: CbfGains,
                  wheelbase: float, u_lin: np.ndarray | None = None, window: float = 50.0) -> RowSet:
    """All pair rows within the longitudinal window followed by both road rows
    of every agent, densely stacked over ``2N`` inputs.  ``e`` is used as given;
    pass ``e.inflated()`` for the controller-side barrier."""
    states = np.asarray(states, dtype=float)
    n = len(states)
    u_lin = np.zeros((n, 2)) if u_lin is None else np.asarray(u_lin, dtype=float)
    I, J = active_pairs(states, window)
    m_pair = len(I)
    B = np.zeros((m_pair + 2 * n, 2 * n))
    a = np.empty(m_pair + 2 * n)
    if m_pair:
        a_p, b_p = pair_constraint_arrays(states[I], states[J], u_lin[I], u_lin[J], e, g, wheelbase)
        rows = np.arange(m_pair)
        a[:m_pair] = a_p
        B[rows, 2 * I] = b_p[:, 0]
        B[rows, 2 * I + 1] = b_p[:, 1]
        B[rows, 2 * J] = b_p[:, 2]
        B[rows, 2 * J + 1] = b_p[:, 3]
    a_r, b_r, a_l, b_l = road_constraint_arrays(states, road, g, wheelbase)
    idx = np.arange(n)
    a[m_pair:m_pair + n] = a_r
    a[m_pair + n:] = a_l
    B[m_pair + idx, 2 * idx] = b_r[:, 0]
    B[m_pair + idx, 2 * idx + 1] = b_r[:, 1]
    B[m_pair + n + idx, 2 * idx] = b_l[:, 0]
    B[m_pair + n + idx, 2 * idx + 1] = b_l[:, 1]
    tags = [("pair", int(i), int(j)) for i, j in zip(I, J)]
    tags += [("road", int(i), "right") for i in idx] + [("road", int(i), "left") for i in idx]
    return RowSet(a, B, tags)
