"""Interchange lane-swap scenario: world generation, the closed-loop engine
and Monte Carlo batches.

Seeds for batch runs are derived with SplitMix64:
``seed_k = splitmix64((master + (k + 1) * 0x9E3779B97F4A7C15) mod 2**64)``,
i.e. the ``(k+1)``-th output of a SplitMix64 stream started at ``master``.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .barrier import EllipseParams, CbfGains, RoadGeometry, assemble_rows, pairwise_h
from .config import ScenarioConfig
from .controllers import BaselineParams, ControllerKind, QpSettings, SafetyFilter, baseline_array
from .dynamics import V, X, Y, VehicleParams, step_array
from .impairment import Clip, DeltaModel, FirstOrder, Gain, Identity, OnRails, Onset
from .metrics import RunMetrics, compute_metrics

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class ScenarioError(RuntimeError):
    pass


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, k: int) -> int:
    return splitmix64((master + (k + 1) * GOLDEN) & MASK64)


@dataclass
class World:
    """Initial conditions shared by every controller replaying a run."""

    states: np.ndarray
    v_des: np.ndarray
    lane: np.ndarray
    swap: np.ndarray
    impairments: list
    seed: int

    @property
    def n_agents(self) -> int:
        return len(self.states)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "states": self.states.tolist(), "v_des": self.v_des.tolist(),
                "lane": self.lane.tolist(), "swap": self.swap.tolist(),
                "impairments": self.impairments}

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        return cls(np.array(d["states"], dtype=float), np.array(d["v_des"], dtype=float),
                   np.array(d["lane"], dtype=int), np.array(d["swap"], dtype=bool),
                   list(d["impairments"]), int(d["seed"]))


def _impairment_specs(cfg: ScenarioConfig, rng: np.random.Generator, n: int) -> list:
    imp = cfg.impairment
    specs: list = [None] * n
    if imp.case == "1":
        k = int(rng.integers(n))
        specs[k] = DeltaModel(Identity(), Clip(imp.clip_lo, imp.clip_hi),
                              Onset(x_position=cfg.swap_zone[0] - imp.onset_before_zone)).spec()
    elif imp.case in ("2", "3"):
        for k in np.flatnonzero(rng.random(n) < imp.probability):
            if imp.case == "2":
                model = DeltaModel(OnRails(), Gain(imp.accel_gain), Onset(time=0.0))
            else:
                model = DeltaModel(FirstOrder(imp.steer_tau), FirstOrder(imp.accel_tau), Onset(time=0.0))
            specs[int(k)] = model.spec()
    return specs


def generate(cfg: ScenarioConfig, seed: int | None = None, max_tries: int = 1000) -> World:
    """Sample initial positions, speeds, swap targets and impairments.

    Each lane gets ``n_agents / 2`` vehicles with gaps ``min_gap + Exp(mean -
    min_gap)`` where the mean spacing matches the configured flow at the
    mid-range speed.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = cfg.n_agents
    per_lane = n // 2
    v_mid = 0.5 * (cfg.v_range[0] + cfg.v_range[1])
    mean_gap = v_mid * 3600.0 / cfg.flow_per_lane
    if mean_gap <= cfg.min_gap:
        raise ScenarioError("flow too dense for the minimum gap")
    ref = EllipseParams(cfg.controller.ellipse_r, cfg.controller.ellipse_alpha)
    for _ in range(max_tries):
        xs, ys, lanes = [], [], []
        for lane, yc in enumerate(cfg.lane_centers):
            gaps = cfg.min_gap + rng.exponential(mean_gap - cfg.min_gap, per_lane)
            front = cfg.front_offset - rng.uniform(0.0, mean_gap)
            x = front - np.concatenate([[0.0], np.cumsum(gaps[1:])])
            xs.append(x)
            ys.append(np.full(per_lane, yc))
            lanes.append(np.full(per_lane, lane))
        x, y, lane = np.concatenate(xs), np.concatenate(ys), np.concatenate(lanes)
        v0 = rng.uniform(*cfg.v_range, n)
        states = np.column_stack([x, y, np.zeros(n), v0])
        if pairwise_h(states, ref.r, ref.alpha).min() > cfg.min_initial_h:
            break
    else:
        raise ScenarioError(f"no collision-free placement after {max_tries} attempts")
    v_des = rng.uniform(*cfg.v_range, n)
    swap = rng.random(n) >= cfg.straight_prob
    impairments = _impairment_specs(cfg, rng, n)
    return World(states, v_des, lane.astype(int), swap, impairments, int(seed))


@dataclass
class TrajectoryLog:
    meta: dict
    t: list = field(default_factory=list)
    states: list = field(default_factory=list)
    u0: list = field(default_factory=list)
    u_star: list = field(default_factory=list)
    u_act: list = field(default_factory=list)
    w: list = field(default_factory=list)
    active: list = field(default_factory=list)
    h0: list = field(default_factory=list)
    loop_ms: list = field(default_factory=list)
    exit_y: np.ndarray | None = None
    fallbacks: int = 0

    def records(self, run_id: int | str = 0):
        """One JSON-ready dict per control step."""
        for k, t in enumerate(self.t):
            yield {"run_id": run_id, "step": k, "t": round(t, 9),
                   "states": self.states[k].tolist(), "u0": self.u0[k].tolist(),
                   "u_star": self.u_star[k].tolist(), "u_act": self.u_act[k].tolist(),
                   "w": self.w[k].tolist(), "active": [list(tag) for tag in self.active[k]],
                   "h0": self.h0[k].tolist()}


def smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


def _lane_targets(cfg: ScenarioConfig, world: World, states: np.ndarray, commanded: np.ndarray):
    """Lateral target at each vehicle's lookahead point.  After the command a
    swapping vehicle follows a smoothstep path from its lane centre to the
    other one over ``lane_change_length`` metres past the zone start."""
    centers = np.asarray(cfg.lane_centers)
    c = cfg.controller
    going = commanded & world.swap
    y_from, y_to = centers[world.lane], centers[1 - world.lane]
    if cfg.lane_change_length <= 0:
        return np.where(going, y_to, y_from)
    look = np.maximum(c.lookahead_gain * states[:, V], 1.0)
    z = (states[:, X] + look - cfg.swap_zone[0]) / cfg.lane_change_length
    return np.where(going, y_from + (y_to - y_from) * smoothstep(z), y_from)


def build_controller(cfg: ScenarioConfig, kind, n: int, params: VehicleParams) -> SafetyFilter:
    c = cfg.controller
    settings = QpSettings(c.slack_weight, c.qp_tol, c.qp_max_iter, c.steer_weight, c.accel_weight)
    return SafetyFilter(kind, n, params, c.eps, c.ctrl_dt, settings, c.warm_start)


def run(world: World, cfg: ScenarioConfig, controller: ControllerKind | str | None = None,
        keep_w: bool = True) -> tuple[RunMetrics, TrajectoryLog]:
    """Closed-loop simulation: plant at ``sim_dt``, controller at ``ctrl_dt``
    with zero-order hold in between."""
    kind = ControllerKind(controller or cfg.controller.kind)
    c = cfg.controller
    n = world.n_agents
    params = VehicleParams(cfg.wheelbase)
    e_ref = EllipseParams(c.ellipse_r, c.ellipse_alpha, c.barrier_margin)
    e_ctrl = e_ref.inflated()
    road = RoadGeometry(cfg.rb_r, cfg.rb_l, abs(cfg.lane_centers[1] - cfg.lane_centers[0]),
                        tuple(cfg.lane_centers))
    gains = CbfGains(l0=c.l0, l1=c.l1)
    filt = build_controller(cfg, kind, n, params)
    qp.warmup()
    models = {i: DeltaModel.from_spec(s) for i, s in enumerate(world.impairments) if s is not None}
    x_start, x_end = cfg.swap_zone
    x_done = x_end + cfg.exit_margin
    sub = cfg.substeps

    meta = {"controller": kind.value, "seed": world.seed, "case": cfg.impairment.case,
            "v_des": world.v_des.tolist(), "swap": world.swap.tolist(), "lane": world.lane.tolist(),
            "lane_centers": list(cfg.lane_centers), "swap_zone": list(cfg.swap_zone),
            "rb": [cfg.rb_r, cfg.rb_l], "ctrl_dt": c.ctrl_dt,
            "completion_half_width": cfg.completion_half_width,
            "impaired": sorted(models)}
    trace = TrajectoryLog(meta)
    exit_y = np.full(n, np.nan)

    states = world.states.copy()
    commanded = states[:, X] >= x_start
    u_star_prev = None
    t = 0.0
    n_steps = int(round(cfg.horizon / c.ctrl_dt))
    for k in range(n_steps):
        if np.all(states[:, X] > x_done):
            break
        commanded |= states[:, X] >= x_start
        bp = BaselineParams(world.v_des, _lane_targets(cfg, world, states, commanded),
                            c.lookahead_gain, 1.0, c.kp_speed)
        u0 = baseline_array(states, bp, params)
        if u_star_prev is None:
            u_meas = None
        else:
            u_meas = u_star_prev.copy()
            for i, m in models.items():
                u_meas[i] = m.peek(u_star_prev[i])

        tic = time.perf_counter()
        u_lin = u_star_prev if (u_star_prev is not None and c.linearize_at == "previous") else None
        rows = assemble_rows(states, e_ctrl, road, gains, params.wheelbase, u_lin, c.pair_window)
        u_star = filt.step(u0, rows, u_meas)
        loop_ms = 1e3 * (time.perf_counter() - tic)

        trace.t.append(t)
        trace.states.append(states.copy())
        trace.u0.append(u0)
        trace.u_star.append(u_star.copy())
        trace.u_act.append(u_meas if u_meas is not None else u_star.copy())
        if keep_w:
            trace.w.append(filt.bank.w.copy())
        trace.active.append(filt.active_tags())
        h0 = pairwise_h(states, e_ref.r, e_ref.alpha)
        trace.h0.append(np.minimum(h0.min(axis=1), h0.min(axis=0)))
        trace.loop_ms.append(loop_ms)

        for _ in range(sub):
            u_act = u_star.copy()
            for i, m in models.items():
                u_act[i] = m.apply(u_star[i], t, states[i, X], u0[i], cfg.sim_dt)
            prev = states
            states = step_array(states, u_act, params.wheelbase, cfg.sim_dt)
            t += cfg.sim_dt
            crossed = (prev[:, X] < x_end) & (states[:, X] >= x_end) & np.isnan(exit_y)
            if crossed.any():
                frac = (x_end - prev[crossed, X]) / (states[crossed, X] - prev[crossed, X])
                exit_y[crossed] = prev[crossed, Y] + frac * (states[crossed, Y] - prev[crossed, Y])
        u_star_prev = u_star

    # vehicles that never reached the zone exit are scored at their last position
    missing = np.isnan(exit_y)
    exit_y[missing] = states[missing, Y]
    trace.exit_y = exit_y
    trace.fallbacks = filt.fallbacks
    return compute_metrics(trace), trace


@dataclass
class RunRecord:
    run: int
    seed: int
    controller: str
    metrics: RunMetrics | None
    error: str | None = None
    initial_states: np.ndarray | None = None


def _run_one(args) -> RunRecord:
    cfg, k, seed, controllers = args
    out = []
    try:
        world = generate(cfg, seed)
    except Exception as exc:  # batch continues
        return [RunRecord(k, seed, ControllerKind(c).value, None, f"generate: {exc}") for c in controllers]
    for c in controllers:
        try:
            metrics, _ = run(world, cfg, c, keep_w=False)
            out.append(RunRecord(k, seed, ControllerKind(c).value, metrics, None, world.states))
        except Exception as exc:
            log.exception("run %d (%s) failed", k, c)
            out.append(RunRecord(k, seed, ControllerKind(c).value, None, repr(exc), world.states))
    return out


def monte_carlo(cfg: ScenarioConfig, n_runs: int, controllers=None, master_seed: int | None = None,
                jobs: int = 1) -> list[RunRecord]:
    """Run ``n_runs`` worlds, each replayed by every requested controller.

    Results are ordered by (run index, controller order) regardless of the
    worker count.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    controllers = [ControllerKind(c) for c in (controllers or list(ControllerKind))]
    master = cfg.seed if master_seed is None else master_seed
    tasks = [(cfg, k, derive_seed(master, k), controllers) for k in range(n_runs)]
    if jobs <= 1:
        batches = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_run_one, tasks))
    return [rec for batch in batches for rec in batch]


def summarize(records: list[RunRecord]) -> dict[str, dict]:
    """Per-controller aggregate shaped like the paper's result tables."""
    out: dict[str, dict] = {}
    for name in dict.fromkeys(r.controller for r in records):
        rows = [r for r in records if r.controller == name]
        ok = [r.metrics for r in rows if r.metrics is not None]
        if not ok:
            out[name] = {"runs": 0, "failed": len(rows)}
            continue
        min_h0 = np.array([m.min_h0 for m in ok])
        max_dac = np.array([m.max_delta_ac for m in ok])
        out[name] = {
            "runs": len(ok),
            "failed": len(rows) - len(ok),
            "min_h0": float(min_h0.min()),
            "mean_min_h0": float(min_h0.mean()),
            "p5_min_h0": float(np.percentile(min_h0, 5)),
            "violations": int(np.sum(min_h0 < 0)),
            "incomplete_ls": int(sum(m.incomplete_lane_changes for m in ok)),
            "worst_completion": float(min(m.worst_completion for m in ok)),
            "oob": float(max(m.oob for m in ok)),
            "max_delta_ac": float(max_dac.max()),
            "mean_max_delta_ac": float(max_dac.mean()),
            "mean_delta_ac_gt2": float(np.mean([m.count_delta_ac_gt2 for m in ok])),
            "avg_speed_drop_mph": float(np.mean([m.avg_speed_drop for m in ok])),
            "mean_loop_ms": float(np.mean([m.loop_ms_mean for m in ok])),
            "max_loop_ms": float(max(m.loop_ms_max for m in ok)),
        }
    return out


def config_with(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy of ``cfg`` with top-level or dotted (``controller.eps``) overrides."""
    cfg = dataclasses.replace(cfg, controller=dataclasses.replace(cfg.controller),
                              impairment=dataclasses.replace(cfg.impairment))
    for key, value in changes.items():
        target = cfg
        parts = key.split("__") if "__" in key else key.split(".")
        for part in parts[:-1]:
            target = getattr(target, part)
        setattr(target, parts[-1], value)
    return cfg.validate()
