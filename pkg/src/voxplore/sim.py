"""Deterministic kinematic simulator: the drone tracks commanded trajectories
exactly while a simulated depth camera fills the occupancy grid.

The simulator owns the clock and a timeline of flight segments. A committed
plan is spliced at a future time; until then the previous segment keeps
playing. Trajectory playback past a segment's end holds the final pose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .angles import wrap_pi
from .config import PlannerConfig
from .grid import OccupancyGrid, SensorPose
from .world import TrueWorld


@dataclass
class RunMetrics:
    exploration_time: float = math.nan
    flight_distance: float = 0.0
    coverage: float = 0.0
    timeline: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("t,x,y,z,yaw,dist_m,coverage_m3,n_frontiers\n")
            for row in self.timeline:
                f.write(",".join(f"{v:.6f}" if isinstance(v, float) else str(v)
                                 for v in row) + "\n")


class HoverSegment:
    """Hold position, optionally spinning in yaw at a constant rate."""

    def __init__(self, position, yaw0: float, yaw_rate: float = 0.0,
                 duration: float = 1.0):
        self.pos = np.asarray(position, dtype=float)
        self.yaw0 = yaw0
        self.yaw_rate = yaw_rate
        self.duration = duration

    def position(self, t):
        return self.pos

    def velocity(self, t):
        return np.zeros(3)

    def acceleration(self, t):
        return np.zeros(3)

    def yaw_at(self, t):
        return wrap_pi(self.yaw0 + self.yaw_rate * min(t, self.duration))

    def yaw_rate_at(self, t):
        return self.yaw_rate if t <= self.duration else 0.0


class StopSegment:
    """Straight-line deceleration to hover at the acceleration limit."""

    def __init__(self, position, velocity, yaw: float, a_max: float):
        self.p0 = np.asarray(position, dtype=float)
        self.v0 = np.asarray(velocity, dtype=float)
        self.yaw = yaw
        speed = float(np.linalg.norm(self.v0))
        self.duration = max(speed / a_max, 1e-3)
        self.acc = -self.v0 / self.duration if speed > 1e-9 else np.zeros(3)

    def position(self, t):
        t = min(t, self.duration)
        return self.p0 + self.v0 * t + 0.5 * self.acc * t * t

    def velocity(self, t):
        if t >= self.duration:
            return np.zeros(3)
        return self.v0 + self.acc * t

    def acceleration(self, t):
        return self.acc if t < self.duration else np.zeros(3)

    def yaw_at(self, t):
        return self.yaw

    def yaw_rate_at(self, t):
        return 0.0


class FlightSegment:
    """A committed position trajectory paired with its heading plan."""

    def __init__(self, trajectory, heading_plan):
        self.traj = trajectory
        self.heading = heading_plan
        self.duration = float(trajectory.duration)

    def position(self, t):
        return self.traj.position(min(t, self.duration))

    def velocity(self, t):
        if t >= self.duration:
            return np.zeros(3)
        return self.traj.velocity(t)

    def acceleration(self, t):
        if t >= self.duration:
            return np.zeros(3)
        return self.traj.acceleration(t)

    def yaw_at(self, t):
        return self.heading.yaw_at(min(t, self.duration))

    def yaw_rate_at(self, t):
        if t >= self.duration:
            return 0.0
        return self.heading.rate_at(t)


@dataclass
class PoseSample:
    position: np.ndarray
    velocity: np.ndarray
    accel: np.ndarray
    yaw: float
    yaw_rate: float


class Simulator:
    def __init__(self, world: TrueWorld, config: PlannerConfig,
                 start=None, start_yaw=None):
        self.world = world
        self.config = config
        self.grid = OccupancyGrid(world.bounds, config.resolution)
        self.t = 0.0
        self.step_count = 0
        start = world.start if start is None else np.asarray(start, dtype=float)
        yaw = world.start_yaw if start_yaw is None else float(start_yaw)
        self.segments: list = [(0.0, HoverSegment(start, yaw, 0.0, math.inf))]
        self.metrics = RunMetrics()
        self._last_pos = start.copy()
        self._scan_period = 1.0 / config.sensor_rate_hz
        self._next_scan = 0.0
        self._pending_box = None
        self._pending_occ: list = []
        self.path_blocked = False
        # Envelope tracking for acceptance checks.
        self.max_speed = 0.0
        self.max_accel = 0.0
        self.max_yaw_rate = 0.0
        self.collisions = 0

    # ------------------------------------------------------------------ timeline

    def splice(self, segment, at_time: float) -> None:
        """Install a segment starting at `at_time`, replacing any later ones."""
        self.segments = [(s, seg) for s, seg in self.segments if s < at_time - 1e-12]
        self.segments.append((at_time, segment))

    def has_pending(self) -> bool:
        return bool(self.segments) and self.segments[-1][0] > self.t + 1e-12

    def _active_at(self, t: float):
        best = self.segments[0]
        for s, seg in self.segments:
            if s <= t + 1e-12:
                best = (s, seg)
            else:
                break
        return best

    def pose_at(self, t: float) -> PoseSample:
        s, seg = self._active_at(t)
        local = t - s
        return PoseSample(
            position=np.asarray(seg.position(local), dtype=float),
            velocity=np.asarray(seg.velocity(local), dtype=float),
            accel=np.asarray(seg.acceleration(local), dtype=float),
            yaw=float(seg.yaw_at(local)),
            yaw_rate=float(seg.yaw_rate_at(local)),
        )

    def remaining_duration(self) -> float:
        s, seg = self._active_at(self.t)
        end = s + seg.duration
        for s2, _ in self.segments:
            if s2 > self.t + 1e-12:
                return math.inf  # a pending plan extends the timeline
        return max(end - self.t, 0.0)

    def trajectory_exhausted(self) -> bool:
        s, seg = self._active_at(self.t)
        return not self.has_pending() and self.t >= s + seg.duration

    # ------------------------------------------------------------------ stepping

    def step(self, dt: float | None = None) -> PoseSample:
        dt = self.config.sim_dt if dt is None else dt
        self.t += dt
        self.step_count += 1
        pose = self.pose_at(self.t)

        self.metrics.flight_distance += float(np.linalg.norm(pose.position - self._last_pos))
        self._last_pos = pose.position.copy()
        self.max_speed = max(self.max_speed, float(np.linalg.norm(pose.velocity)))
        # Acceleration envelope is per-axis, matching the primitive input set.
        self.max_accel = max(self.max_accel, float(np.abs(pose.accel).max()))
        self.max_yaw_rate = max(self.max_yaw_rate, abs(pose.yaw_rate))
        if self.world.point_inside_obstacle(pose.position)[0]:
            self.collisions += 1

        if self.t + 1e-9 >= self._next_scan:
            self._next_scan += self._scan_period
            # Transient overshoot at an open bounds face must not kill the run.
            spos = np.clip(pose.position, self.world.bounds.box_min + 1e-9,
                           self.world.bounds.box_max - 1e-9)
            sensor = SensorPose(spos, pose.yaw, self.config.fov_h,
                                self.config.fov_v, self.config.sensor_range)
            self.grid.integrate_scan(sensor, self.world)
            box, occ = self.grid.consume_changes()
            if box is not None:
                if self._pending_box is None:
                    self._pending_box = [box[0].copy(), box[1].copy()]
                else:
                    self._pending_box[0] = np.minimum(self._pending_box[0], box[0])
                    self._pending_box[1] = np.maximum(self._pending_box[1], box[1])
            if occ:
                self._pending_occ.extend(occ)
                if self._new_occupied_near_path(occ):
                    self.path_blocked = True
            self.metrics.coverage = self.grid.known_volume()
        return pose

    def record_timeline(self, n_frontiers: int) -> None:
        pose = self.pose_at(self.t)
        self.metrics.timeline.append((
            self.t, float(pose.position[0]), float(pose.position[1]),
            float(pose.position[2]), pose.yaw, self.metrics.flight_distance,
            self.metrics.coverage, n_frontiers,
        ))

    def take_changes(self):
        box = self._pending_box
        occ = self._pending_occ
        self._pending_box = None
        self._pending_occ = []
        return (None if box is None else (box[0], box[1])), occ

    def _new_occupied_near_path(self, new_occ, clearance: float = 0.3) -> bool:
        """Any newly Occupied voxel close to the not-yet-flown trajectory."""
        s, seg = self._active_at(self.t)
        ends = [s + seg.duration] + [s2 + g.duration for s2, g in self.segments
                                     if s2 > self.t]
        horizon = min(max(ends) - self.t, 6.0)
        if horizon <= 0:
            return False
        ts = np.arange(self.t, self.t + horizon, 0.1)
        pts = np.array([self.pose_at(t).position for t in ts])
        centers = np.array([self.grid.cell_center(c) for c in new_occ])
        for c in centers:
            if np.min(np.linalg.norm(pts - c[None, :], axis=1)) < clearance:
                return True
        return False
