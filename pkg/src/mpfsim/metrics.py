"""Per-run metrics computed from a trajectory log."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MPS_TO_MPH = 1.0 / 0.44704
DELTA_AC_THRESHOLD = 2.0
TIMING_FIELDS = ("loop_ms_mean", "loop_ms_max")


@dataclass
class RunMetrics:
    min_h0: float
    incomplete_lane_changes: int
    worst_completion: float
    oob: float
    max_delta_ac: float
    count_delta_ac_gt2: int
    avg_speed_drop: float
    loop_ms_mean: float
    loop_ms_max: float
    fallbacks: int = 0
    steps: int = 0

    def as_row(self, timing: bool = True) -> dict:
        """Field dict; ``timing=False`` drops the wall-clock fields so the
        row depends only on seed, config and controller."""
        row = asdict(self)
        if not timing:
            for key in TIMING_FIELDS:
                del row[key]
        return row


def completion_margins(exit_y, lane, swap, lane_centers, half_width: float) -> np.ndarray:
    """Signed distance of each swapping vehicle's body edge past the lane
    divider at the zone exit; negative means the change is incomplete.
    Non-swapping vehicles get NaN."""
    centers = np.asarray(lane_centers, dtype=float)
    lane = np.asarray(lane, dtype=int)
    divider = centers.mean()
    direction = np.sign(centers[1 - lane] - centers[lane])
    margin = direction * (np.asarray(exit_y, dtype=float) - divider) - half_width
    return np.where(np.asarray(swap, dtype=bool), margin, np.nan)


def compute_metrics(log) -> RunMetrics:
    meta = log.meta
    states = np.asarray(log.states)
    u_star = np.asarray(log.u_star)

    min_h0 = float(np.min(log.h0)) if log.h0 else math.inf

    margins = completion_margins(log.exit_y, meta["lane"], meta["swap"], meta["lane_centers"],
                                 meta["completion_half_width"])
    swapping = ~np.isnan(margins)
    incomplete = int(np.sum(margins[swapping] < 0))
    worst = float(margins[swapping].min()) if swapping.any() else math.nan

    rb_r, rb_l = meta["rb"]
    y = states[:, :, 1]
    oob = float(max(0.0, np.max(rb_r - y), np.max(y - rb_l)))

    if len(u_star) > 1:
        dac = np.abs(np.diff(u_star[:, :, 1], axis=0))
        max_dac = float(dac.max())
        n_harsh = int(np.sum(dac > DELTA_AC_THRESHOLD))
    else:
        max_dac, n_harsh = 0.0, 0

    x0, x1 = meta["swap_zone"]
    x, v = states[:, :, 0], states[:, :, 3]
    in_zone = (x >= x0) & (x <= x1)
    v_des = np.asarray(meta["v_des"], dtype=float)
    drops = [v_des[i] - v[in_zone[:, i], i].mean() for i in range(len(v_des)) if in_zone[:, i].any()]
    speed_drop = float(np.mean(drops) * MPS_TO_MPH) if drops else 0.0

    loop = np.asarray(log.loop_ms, dtype=float)
    return RunMetrics(
        min_h0=min_h0,
        incomplete_lane_changes=incomplete,
        worst_completion=worst,
        oob=oob,
        max_delta_ac=max_dac,
        count_delta_ac_gt2=n_harsh,
        avg_speed_drop=speed_drop,
        loop_ms_mean=float(loop.mean()) if loop.size else 0.0,
        loop_ms_max=float(loop.max()) if loop.size else 0.0,
        fallbacks=int(getattr(log, "fallbacks", 0)),
        steps=len(log.t),
    )
