"""Shared planner domain types."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DynamicLimits:
    v_max: float = 2.0
    a_max: float = 1.0
    yaw_rate_max: float = 1.0
    yaw_acc_max: float = 2.0

    def __post_init__(self):
        if min(self.v_max, self.a_max, self.yaw_rate_max, self.yaw_acc_max) <= 0:
            raise ValueError("dynamic limits must be strictly positive")


@dataclass
class DroneState:
    position: np.ndarray
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
