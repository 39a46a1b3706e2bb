"""Planner configuration: benchmark defaults and flat key=value file loading."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .tour import TourConfig
from .types import DynamicLimits


class ConfigError(Exception):
    pass


@dataclass
class PlannerConfig:
    # Map / sensor
    resolution: float = 0.15
    fov_h_deg: float = 80.0
    fov_v_deg: float = 60.0
    sensor_range: float = 4.5
    sensor_rate_hz: float = 10.0
    # Dynamic limits
    v_max: float = 2.0
    a_max: float = 1.0
    yaw_rate_max: float = 1.0
    yaw_acc_max: float = 2.0
    # Tour costs
    w_c: float = 1.5
    w_b: float = 0.3
    w_f: float = 0.3
    h_max: float = 4.5
    d_thr: float = 10.0
    b_min_x: float = 15.0
    b_min_y: float = 15.0
    b_min_z: float = 10.0
    # Heading
    tau: float = 1.3
    local_radius: float = 6.0
    # Guided search
    lambda1: float = 30.0
    lambda2: float = 80.0
    lambda3: float = 80.0
    node_budget: int = 50000
    goal_tolerance: float = 0.5
    clearance: float = 0.4
    # Replanning
    t_min: float = 0.1
    rho: float = 1.3
    replan_horizon: float = 1.0
    # Simulation
    sim_dt: float = 0.02
    # Ablation switches
    edge_priority: bool = True
    bottom_ray: bool = True
    two_stage: bool = True
    guided: bool = True

    def validate(self) -> "PlannerConfig":
        positive = ["resolution", "fov_h_deg", "fov_v_deg", "sensor_range",
                    "sensor_rate_hz", "v_max", "a_max", "yaw_rate_max", "yaw_acc_max",
                    "h_max", "d_thr", "b_min_x", "b_min_y", "b_min_z", "local_radius",
                    "goal_tolerance", "clearance", "t_min", "rho", "replan_horizon",
                    "sim_dt", "node_budget"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config key '{name}' must be positive")
        for name in ("w_c", "w_b", "w_f", "lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"config key '{name}' must be non-negative (weights >= 0)")
        if self.tau < 1.0:
            raise ConfigError("config key 'tau' must be >= 1")
        if self.rho < 1.0:
            raise ConfigError("config key 'rho' must be >= 1")
        if not (0 < self.fov_h_deg < 180 and 0 < self.fov_v_deg < 180):
            raise ConfigError("config key 'fov_h_deg'/'fov_v_deg' must be in (0, 180)")
        return self

    # Derived views used across the planner modules.

    @property
    def fov_h(self) -> float:
        return math.radians(self.fov_h_deg)

    @property
    def fov_v(self) -> float:
        return math.radians(self.fov_v_deg)

    def limits(self) -> DynamicLimits:
        return DynamicLimits(self.v_max, self.a_max, self.yaw_rate_max, self.yaw_acc_max)

    def tour(self) -> TourConfig:
        return TourConfig(self.w_c, self.w_b, self.w_f, self.h_max, self.d_thr,
                          (self.b_min_x, self.b_min_y, self.b_min_z),
                          edge_priority=self.edge_priority, bottom_ray=self.bottom_ray)

    def lam(self) -> tuple:
        if not self.guided:
            return (self.lambda1, 0.0, 0.0)
        return (self.lambda1, self.lambda2, self.lambda3)


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def load_config(path=None) -> PlannerConfig:
    """Flat `key = value` config file; unknown keys and bad values are errors.

    An empty or missing-path config yields the benchmark defaults.
    """
    cfg = PlannerConfig()
    if path is None:
        return cfg.validate()
    known = {f.name: f.type for f in fields(PlannerConfig)}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{ln}: expected 'key = value', got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise ConfigError(f"{path}:{ln}: unknown config key '{key}'")
            default = getattr(cfg, key)
            try:
                if isinstance(default, bool):
                    setattr(cfg, key, _BOOL_WORDS[value.lower()])
                elif isinstance(default, int):
                    setattr(cfg, key, int(value))
                else:
                    setattr(cfg, key, float(value))
            except (ValueError, KeyError) as err:
                raise ConfigError(
                    f"{path}:{ln}: bad value {value!r} for config key '{key}'") from err
    return cfg.validate()
