"""Run configuration and its YAML file form.

A config file has up to four top-level sections, each optional::

    scenario:    {n_agents: 16, v_range: [20, 24], seed: 7, ...}
    controller:  {kind: split-mpf, eps: 0.2, ...}
    impairment:  {case: "1", probability: 0.5, ...}
    output:      {dir: out, trajectory: true}

Unknown keys are rejected with their dotted location.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .controllers import ControllerKind

CASES = ("none", "1", "2", "3")


class ConfigError(ValueError):
    pass


@dataclass
class ControllerConfig:
    kind: str = "no-mpf"
    eps: float = 0.2
    ctrl_dt: float = 0.1
    lookahead_gain: float = 0.9
    kp_speed: float = 0.5
    steer_weight: float = 3e5
    accel_weight: float = 1.0
    slack_weight: float = 1e6
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    warm_start: bool = True
    ellipse_r: float = 2.0
    ellipse_alpha: float = 3.0
    barrier_margin: float = 0.1
    l0: float = 0.8
    l1: float = 2.4
    pair_window: float = 50.0
    linearize_at: str = "previous"

    def validate(self):
        try:
            ControllerKind(self.kind)
        except ValueError:
            raise ConfigError(f"controller.kind: unknown controller {self.kind!r}") from None
        if self.eps <= 0 or self.ctrl_dt <= 0:
            raise ConfigError("controller.eps and controller.ctrl_dt must be positive")
        if self.linearize_at not in ("previous", "zero"):
            raise ConfigError("controller.linearize_at must be 'previous' or 'zero'")


@dataclass
class ImpairmentConfig:
    case: str = "none"
    probability: float = 0.5
    clip_lo: float = -8.0
    clip_hi: float = -0.2
    onset_before_zone: float = 20.0
    accel_gain: float = 0.7
    steer_tau: float = 0.2
    accel_tau: float = 0.4

    def validate(self):
        self.case = str(self.case)
        if self.case not in CASES:
            raise ConfigError(f"impairment.case: expected one of {CASES}, got {self.case!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("impairment.probability must lie in [0, 1]")


@dataclass
class ScenarioConfig:
    n_agents: int = 16
    v_range: tuple[float, float] = (20.0, 24.0)
    straight_prob: float = 0.15
    lane_centers: tuple[float, float] = (-1.75, 1.75)
    rb_r: float = -3.5
    rb_l: float = 3.5
    swap_zone: tuple[float, float] = (0.0, 120.0)
    exit_margin: float = 30.0
    lane_change_length: float = 90.0
    flow_per_lane: float = 3400.0
    min_gap: float = 15.0
    front_offset: float = -25.0
    min_initial_h: float = 0.5
    completion_half_width: float = 1.0
    wheelbase: float = 3.0
    sim_dt: float = 0.01
    horizon: float = 30.0
    seed: int = 0
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    impairment: ImpairmentConfig = field(default_factory=ImpairmentConfig)

    def validate(self) -> "ScenarioConfig":
        if self.n_agents < 1 or self.n_agents % 2:
            raise ConfigError("scenario.n_agents must be a positive even number (two lanes)")
        lo, hi = self.v_range
        if not 0 < lo <= hi:
            raise ConfigError("scenario.v_range must satisfy 0 < lo <= hi")
        if not 0.0 <= self.straight_prob <= 1.0:
            raise ConfigError("scenario.straight_prob must lie in [0, 1]")
        if self.lane_change_length < 0:
            raise ConfigError("scenario.lane_change_length must be non-negative")
        if not self.rb_r < self.rb_l:
            raise ConfigError("scenario.rb_r must be below scenario.rb_l")
        ratio = self.controller.ctrl_dt / self.sim_dt
        if self.sim_dt <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("controller.ctrl_dt must be an integer multiple of scenario.sim_dt")
        self.controller.validate()
        self.impairment.validate()
        return self

    @property
    def substeps(self) -> int:
        return int(round(self.controller.ctrl_dt / self.sim_dt))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"scenario", "controller", "impairment", "output"}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names or key in ("controller", "impairment"):
            raise ConfigError(f"{where}.{key}: unknown key")
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise ConfigError(f"{where}.{key}: expected a list of {len(default)} numbers")
            value = tuple(float(v) for v in value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected true/false")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
            if isinstance(default, int) and not float(value).is_integer():
                raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
            value = type(default)(value)
        elif isinstance(default, str):
            value = str(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> tuple[ScenarioConfig, dict]:
    """Build a validated config; returns ``(config, output_section)``."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section (expected one of {sorted(_SECTIONS)})")
    cfg = _build(ScenarioConfig, data.get("scenario") or {}, "scenario")
    cfg.controller = _build(ControllerConfig, data.get("controller") or {}, "controller")
    cfg.impairment = _build(ImpairmentConfig, data.get("impairment") or {}, "impairment")
    output = data.get("output") or {}
    if not isinstance(output, dict):
        raise ConfigError("output: expected a mapping")
    for key in output:
        if key not in ("dir", "trajectory"):
            raise ConfigError(f"output.{key}: unknown key")
    return cfg.validate(), output


def load_config(path: str | Path) -> tuple[ScenarioConfig, dict]:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from None
    return config_from_dict(data)
