import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpfsim.dynamics import (ACCEL_MAX, ACCEL_MIN, STEER_LIMIT, ControlInput, VehicleParams,
                             VehicleState, derivative, saturate, step, step_array, wrap_angle)

from oracles import exact_arc

P = VehicleParams()


def test_derivative_straight_coast():
    assert derivative(VehicleState(0, 0, 0, 20), ControlInput(0, 0), P) == pytest.approx((20, 0, 0, 0))


def test_derivative_axis_aligned():
    d = derivative(VehicleState(0, 0, math.pi / 2, 10), ControlInput(0, 1), P)
    assert d == pytest.approx((0, 10, 0, 1), abs=1e-12)


def test_derivative_full_lock_yaw_rate():
    d = derivative(VehicleState(0, 0, 0, 20), ControlInput(math.pi / 7, 0), P)
    assert d[2] == pytest.approx(20 * (math.pi / 7) / 3, abs=1e-4)
    assert d[2] == pytest.approx(2.9920, abs=1e-4)


def test_step_straight_coast():
    s = step(VehicleState(0, 0, 0, 20), ControlInput(0, 0), P, 0.1)
    assert s.x == pytest.approx(2.0, abs=1e-12)
    assert s.v == 20


def test_step_constant_accel():
    s = step(VehicleState(0, 0, 0, 20), ControlInput(0, 1), P, 0.1)
    assert s.v == pytest.approx(20.1, abs=1e-12)
    assert s.x == pytest.approx(2.0050, abs=1e-12)


def test_step_matches_exact_arc():
    s = step(VehicleState(0, 0, 0, 10), ControlInput(0.1, 0), P, 0.1)
    x, y, th = exact_arc(0, 0, 0, 10, 0.1, 3.0, 0.1)
    assert s.theta == pytest.approx(10 * 0.1 / 3 * 0.1, abs=1e-12)
    assert math.hypot(s.x - x, s.y - y) < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0.5, 24), st.floats(-STEER_LIMIT, STEER_LIMIT))
def test_rk4_arc_accuracy_property(theta, v, delta):
    s = step(VehicleState(1.0, -2.0, theta, v), ControlInput(delta, 0.0), P, 0.1)
    x, y, _ = exact_arc(1.0, -2.0, theta, v, delta, 3.0, 0.1)
    assert math.hypot(s.x - x, s.y - y) < 1e-6
    assert s.v == v


def test_speed_clamped_at_zero():
    s = step(VehicleState(0, 0, 0, 0.3), ControlInput(0, -8), P, 0.1)
    assert s.v == 0.0
    s2 = step(s, ControlInput(0, -8), P, 0.1)
    assert s2.v == 0.0 and s2.x == s.x


def test_heading_wrapped():
    s = step(VehicleState(0, 0, math.pi - 0.01, 20), ControlInput(STEER_LIMIT, 0), P, 0.1)
    assert -math.pi < s.theta <= math.pi
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step(VehicleState(0, 0, 0, 20), ControlInput(0, 0), P, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(wheelbase=0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-2, 2), st.floats(-30, 30))
def test_saturation_idempotent(delta, ac):
    once = saturate(np.array([delta, ac]), P)
    assert np.array_equal(saturate(once, P), once)
    assert abs(once[0]) <= STEER_LIMIT and ACCEL_MIN <= once[1] <= ACCEL_MAX


def test_vectorised_step_matches_scalar():
    rng = np.random.default_rng(0)
    states = np.column_stack([rng.normal(size=5), rng.normal(size=5), rng.uniform(-1, 1, 5),
                              rng.uniform(5, 24, 5)])
    controls = np.column_stack([rng.uniform(-0.4, 0.4, 5), rng.uniform(-8, 4, 5)])
    out = step_array(states, controls, 3.0, 0.1)
    for k in range(5):
        s = step(VehicleState.from_array(states[k]), ControlInput.from_array(controls[k]), P, 0.1)
        assert np.allclose(out[k], s.as_array(), atol=1e-12)
