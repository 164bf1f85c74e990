import math

import numpy as np
import pytest

from mpfsim.barrier import CbfGains, EllipseParams, RoadGeometry, RowSet, assemble_rows
from mpfsim.controllers import (BaselineParams, ControllerKind, QpSettings, SafetyFilter,
                                WFilterBank, baseline, baseline_array, control_step_full_mpf,
                                control_step_no_mpf)
from mpfsim.dynamics import VehicleParams, VehicleState, step_array
from mpfsim.impairment import Clip, DeltaModel, Gain, Identity

P = VehicleParams()
E = EllipseParams().inflated()
ROAD = RoadGeometry()
G = CbfGains()


def test_baseline_equilibrium():
    b = BaselineParams([20.0], [-1.75])
    u = baseline(VehicleState(0, -1.75, 0, 20), b, P)
    assert u.delta == pytest.approx(0.0, abs=1e-12) and u.ac == 0.0


def test_baseline_speed_loop():
    b = BaselineParams([20.0], [0.0], kp_speed=0.5)
    assert baseline(VehicleState(0, 0, 0, 19), b, P).ac == pytest.approx(0.5)


def test_baseline_pure_pursuit_circle():
    b = BaselineParams([20.0], [3.5], lookahead_gain=0.5)
    u = baseline(VehicleState(0, 0, 0, 20), b, P)
    assert u.delta == pytest.approx(3.0 * 2 * 3.5 / (3.5 ** 2 + 10 ** 2), rel=1e-12)
    assert u.delta == pytest.approx(0.18708, abs=1e-5)


def test_baseline_saturates():
    # curvature peaks at 1 / lookahead when the offset equals the lookahead
    b = BaselineParams([40.0, 0.0], [2.4, -1.75])
    u = baseline_array(np.array([[0, 0, 0, 2.0], [0, -1.75, 0, 20.0]]), b, P)
    assert u[0, 0] == pytest.approx(math.pi / 7) and u[0, 1] == 4.0
    assert u[1, 1] == -8.0


def test_baseline_lookahead_floor():
    with pytest.raises(ValueError):
        BaselineParams([20.0], [0.0], min_lookahead=0.5)


def test_filter_constant_deficit_one_step():
    bank = WFilterBank.full(1, 0.2).advanced(np.array([0.0, 1.0]), np.zeros(2), 0.1)
    assert bank.w[1] == pytest.approx(1 - math.exp(-0.5))
    assert bank.w[1] == pytest.approx(0.3935, abs=1e-4)


def test_filter_converges_to_deficit():
    bank = WFilterBank.full(1, 0.2)
    for _ in range(50):
        bank = bank.advanced(np.array([0.3, -1.0]), np.zeros(2), 0.1)
    assert bank.w == pytest.approx([0.3, -1.0], abs=1e-9)


def test_split_bank_diagonal_pinned():
    bank = WFilterBank.split(2, 0.2)
    local = np.zeros((4, 4))
    bank = bank.advanced(np.ones(4), local, 0.1)
    assert np.all(np.diag(bank.w) == 0.0)
    off = bank.w[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 1 - math.exp(-0.5))


def _two_vehicle_rows(u_lin=None):
    states = np.array([[0.0, -1.75, 0.0, 24.0], [9.0, -1.75, 0.0, 20.0]])
    return states, assemble_rows(states, E, ROAD, G, P.wheelbase, u_lin)


def test_no_active_rows_returns_baseline():
    rows = RowSet(np.array([5.0]), np.array([[1.0, 0.0, 0.0, 0.0]]), [("road", 0, "right")])
    u0 = np.array([0.1, 1.0, -0.1, -2.0])
    u, sol = control_step_no_mpf(u0, rows, P)
    assert u == pytest.approx(u0)


def test_full_mpf_zero_deficit_matches_no_mpf():
    _, rows = _two_vehicle_rows()
    u0 = np.array([0.0, 2.0, 0.0, 0.0])
    u_no, _ = control_step_no_mpf(u0, rows, P)
    bank = WFilterBank.full(2, 0.2)
    u_full, bank, _ = control_step_full_mpf(u0, rows, bank, u_no, u_no, 0.1, P)
    assert np.all(bank.w == 0.0)
    assert np.array_equal(u_full, u_no)


def test_full_mpf_compensates_missing_braking():
    # the follower's braking is lost and the leader is already at full throttle,
    # so the shared filter makes the follower command harder braking
    _, rows = _two_vehicle_rows()
    u0 = np.array([0.0, 2.0, 0.0, 0.0])
    u_no, _ = control_step_no_mpf(u0, rows, P)
    bank = WFilterBank.full(2, 0.2)
    u_act = u_no.copy()
    u_act[1] = 0.0
    u_full, bank, _ = control_step_full_mpf(u0, rows, bank, u_act, u_no, 0.1, P)
    assert bank.w[1] > 0
    assert u_full[3] == u_no[3] == 4.0
    assert u_full[1] < u_no[1]
    assert np.min(rows.a + rows.B @ (u_full + bank.w)) >= -1e-4


def _closed_loop(kind, model, steps=40, eps=0.2):
    states = np.array([[0.0, -1.75, 0.0, 24.0], [14.0, -1.75, 0.0, 20.0]])
    bp = BaselineParams([26.0, 18.0], [-1.75, -1.75], 1.0)
    filt = SafetyFilter(kind, 2, P, eps, 0.1, QpSettings(steer_weight=1e5))
    out, u_prev, t = [], None, 0.0
    for _ in range(steps):
        u0 = baseline_array(states, bp, P)
        rows = assemble_rows(states, E, ROAD, G, P.wheelbase, u_prev)
        meas = None
        if u_prev is not None:
            meas = model.peek(u_prev[0]) if model else u_prev[0]
            meas = np.vstack([meas, u_prev[1]])
        u = filt.step(u0, rows, meas)
        u_act = u.copy()
        for _ in range(10):
            if model:
                u_act[0] = model.apply(u[0], t, states[0, 0], u0[0], 0.01)
            states = step_array(states, u_act, P.wheelbase, 0.01)
            t += 0.01
        out.append(u.copy())
        u_prev = u
    return np.array(out), filt


def test_nominal_controllers_agree():
    runs = {k: _closed_loop(k, None)[0] for k in ControllerKind}
    ref = runs[ControllerKind.NO_MPF]
    assert np.abs(ref[:, 0, 1]).max() > 0.5  # the pair constraint is engaged
    for k in (ControllerKind.FULL_MPF, ControllerKind.SPLIT_MPF):
        assert np.max(np.abs(runs[k] - ref)) <= 1e-9


def test_impairment_separates_controllers():
    model = lambda: DeltaModel(Identity(), Clip(-0.5, 4.0))  # noqa: E731
    no, _ = _closed_loop(ControllerKind.NO_MPF, model())
    full, filt = _closed_loop(ControllerKind.FULL_MPF, model())
    assert np.max(np.abs(no - full)) > 1e-3
    assert np.any(filt.bank.w != 0)
    assert filt.fallbacks == 0


def test_split_controller_uses_own_entries():
    model = DeltaModel(Identity(), Gain(0.5))
    u, filt = _closed_loop(ControllerKind.SPLIT_MPF, model)
    assert filt.bank.w.shape == (4, 4)
    assert np.all(np.diag(filt.bank.w) == 0.0)
    # the impaired accelerator never sees its own deficit, the other
    # sub-controllers do
    assert filt.bank.w[1, 1] == 0.0
    assert abs(filt.bank.w[3, 1]) > 1e-3 and abs(filt.bank.w[0, 1]) > 1e-3


def test_active_tags_reported():
    _, filt = _closed_loop(ControllerKind.NO_MPF, None, steps=10)
    tags = filt.active_tags()
    assert all(isinstance(t, tuple) for t in tags)
    assert SafetyFilter("no-mpf", 2, P).active_tags() == []
