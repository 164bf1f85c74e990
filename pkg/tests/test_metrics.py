import numpy as np
import pytest

from mpfsim.metrics import MPS_TO_MPH, completion_margins, compute_metrics
from mpfsim.scenario import TrajectoryLog


def _log(n_steps=20, u_ac=None, exit_y=None, y=-1.75, swap=False):
    meta = {"lane": [0], "swap": [swap], "lane_centers": [-1.75, 1.75], "completion_half_width": 1.0,
            "rb": [-3.5, 3.5], "swap_zone": [0.0, 120.0], "v_des": [20.0]}
    log = TrajectoryLog(meta)
    for k in range(n_steps):
        log.t.append(0.1 * k)
        log.states.append(np.array([[2.0 * k, y, 0.0, 20.0]]))
        ac = 0.0 if u_ac is None else u_ac[k]
        log.u_star.append(np.array([[0.0, ac]]))
        log.h0.append(np.array([5.0]))
        log.loop_ms.append(1.0)
    log.exit_y = np.array([y if exit_y is None else exit_y])
    return log


def test_constant_speed_log_is_quiet():
    m = compute_metrics(_log())
    assert m.max_delta_ac == 0 and m.count_delta_ac_gt2 == 0
    assert m.oob == 0 and m.incomplete_lane_changes == 0 and m.avg_speed_drop == 0
    assert m.min_h0 == 5.0 and m.steps == 20


def test_acceleration_reversal():
    ac = [4.0] * 10 + [-8.0] * 10
    m = compute_metrics(_log(u_ac=ac))
    assert m.max_delta_ac == pytest.approx(12.0)
    assert m.count_delta_ac_gt2 == 1


def test_short_lane_change():
    # body edge 0.3 m short of the divider when leaving the zone
    m = compute_metrics(_log(swap=True, exit_y=0.7))
    assert m.incomplete_lane_changes == 1
    assert m.worst_completion == pytest.approx(-0.3)


def test_completion_margin_both_directions():
    marg = completion_margins([1.75, -1.75, 0.0], [0, 1, 0], [True, True, False], [-1.75, 1.75], 1.0)
    assert marg[:2] == pytest.approx([0.75, 0.75])
    assert np.isnan(marg[2])


def test_out_of_bounds():
    m = compute_metrics(_log(y=-3.9))
    assert m.oob == pytest.approx(0.4)


def test_speed_drop_in_mph():
    log = _log()
    for s in log.states:
        s[0, 3] = 18.0
    assert compute_metrics(log).avg_speed_drop == pytest.approx(2.0 * MPS_TO_MPH)
