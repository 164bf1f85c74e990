import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpfsim.qp import QpError, QpProblem, explicit_single_constraint, solve

from oracles import brute_force_qp


def test_soft_constraint_pulls_up_to_boundary():
    sol = solve(QpProblem([0.0], [-1.0], [[1.0]], [-10], [10]))
    assert sol.optimal
    assert sol.u_star[0] == pytest.approx(1.0, abs=1e-5)
    assert sol.slacks[0] == pytest.approx(1e-6, rel=1e-3)


def test_two_variable_projection():
    sol = solve(QpProblem([0.0, 0.0], [-2.0], [[1.0, 1.0]], [-10, -10], [10, 10]))
    assert sol.u_star == pytest.approx([1.0, 1.0], abs=1e-5)


def test_infeasible_hard_constraint_lands_on_bound_with_slack():
    sol = solve(QpProblem([0.0], [-100.0], [[1.0]], [-4.0], [4.0]))
    assert sol.u_star[0] == pytest.approx(4.0)
    assert sol.slacks[0] == pytest.approx(96.0, rel=1e-5)
    assert sol.bound_state[0] == 1


def test_unconstrained_returns_u0():
    sol = solve(QpProblem([0.3, -1.0], [5.0], [[1.0, 2.0]], [-1, -8], [1, 4]))
    assert sol.u_star == pytest.approx([0.3, -1.0])
    assert sol.iterations <= 1


def test_u0_outside_box_is_clipped():
    sol = solve(QpProblem([2.0, -9.0], [10.0], [[1.0, 1.0]], [-1, -8], [1, 4]))
    assert sol.u_star == pytest.approx([1.0, -8.0])


def test_objective_history_monotone():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n, m = 6, 8
        p = QpProblem(rng.normal(size=n), rng.normal(size=m) - 1, rng.normal(size=(m, n)),
                      -np.ones(n), np.ones(n), 1e3)
        sol = solve(p, record_history=True)
        h = np.array(sol.history)
        assert np.all(np.diff(h) <= 1e-9 * (1 + np.abs(h[:-1])))


def test_invalid_problems():
    with pytest.raises(QpError):
        QpProblem([0.0], [0.0], [[1.0]], [1.0], [1.0])
    with pytest.raises(QpError):
        QpProblem([0.0], [0.0], [[1.0]], [0.0], [1.0], slack_weight=0.0)
    with pytest.raises(QpError):
        QpProblem([0.0], [0.0], [[1.0]], [0.0], [1.0], weights=[0.0])


def test_max_iter_reported():
    rng = np.random.default_rng(0)
    p = QpProblem(rng.normal(size=6), rng.normal(size=10) - 3, rng.normal(size=(10, 6)),
                  -np.ones(6), np.ones(6))
    sol = solve(p, max_iter=1)
    assert sol.status == "max_iter" and not sol.optimal


def test_warm_start_reaches_same_optimum():
    rng = np.random.default_rng(2)
    p = QpProblem(rng.normal(size=8), rng.normal(size=12) - 1, rng.normal(size=(12, 8)),
                  -np.ones(8), np.ones(8))
    cold = solve(p)
    warm = solve(p, warm_start=cold)
    assert np.allclose(cold.u_star, warm.u_star, atol=1e-9)
    assert warm.iterations <= 2
    # a stale working set from a different problem still converges
    q = QpProblem(rng.normal(size=8), rng.normal(size=12) - 1, rng.normal(size=(12, 8)),
                  -np.ones(8), np.ones(8))
    assert np.allclose(solve(q, warm_start=cold).u_star, solve(q).u_star, atol=1e-8)


def _random_problem(rng):
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    u0 = rng.uniform(-2, 2, n)
    B = rng.normal(size=(m, n))
    a = rng.normal(size=m) * 2
    lb = -rng.uniform(0.2, 2, n)
    ub = rng.uniform(0.2, 2, n)
    W = float(10 ** rng.uniform(0, 4))
    w = rng.uniform(0.5, 3, n)
    return u0, a, B, lb, ub, W, w


def test_matches_brute_force_enumeration():
    rng = np.random.default_rng(12345)
    for _ in range(200):
        u0, a, B, lb, ub, W, w = _random_problem(rng)
        sol = solve(QpProblem(u0, a, B, lb, ub, W, w))
        u_ref, _, obj_ref = brute_force_qp(u0, a, B, lb, ub, W, w)
        assert sol.optimal
        assert np.max(np.abs(sol.u_star - u_ref)) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.floats(-5, 5), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_single_row_matches_closed_form(u0, a, b):
    b = np.array(b)
    if np.linalg.norm(b) < 1e-2:
        return
    ref = explicit_single_constraint(u0, a, b)
    sol = solve(QpProblem(u0, [a], [b], [-1e6, -1e6], [1e6, 1e6], slack_weight=1e12))
    assert np.max(np.abs(sol.u_star - ref)) <= 1e-5


def test_closed_form_with_filter_vector():
    u = explicit_single_constraint([0.0, 0.0], -1.0, [1.0, 0.0], w=[-0.5, 0.0])
    assert u == pytest.approx([1.5, 0.0])
    with pytest.raises(QpError):
        explicit_single_constraint([0.0], -1.0, [0.0])


def test_kkt_residual_small():
    rng = np.random.default_rng(9)
    for _ in range(50):
        u0, a, B, lb, ub, W, w = _random_problem(rng)
        assert solve(QpProblem(u0, a, B, lb, ub, W, w)).kkt_residual < 1e-8
