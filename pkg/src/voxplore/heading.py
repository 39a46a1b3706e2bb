"""Heading planning: single-target yaw ramps and two-stage sweeps.

When several viewpoints sit close to the flight corridor, the yaw profile is
split in two so the sensor sweeps through the viewpoint whose heading differs
most from the current one, then turns to the target heading. Both segments are
uniform cubic B-splines optimized for smoothness, soft endpoint attachment and
angular-rate/acceleration feasibility.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .angles import shortest_signed_delta, wrap_pi, wrapped_abs_diff
from .bspline import UniformBspline
from .frontiers import Viewpoint
from .grid import OccupancyGrid
from .types import DroneState

DEFAULT_WEIGHTS = (1.0, 100.0, 100.0, 10.0)


@dataclass
class YawTrajectory:
    """Yaw profile as an unwrapped uniform cubic B-spline."""

    control_points: np.ndarray
    knot_span: float
    converged: bool = True

    def _spline(self) -> UniformBspline:
        return UniformBspline(self.control_points, self.knot_span)

    @property
    def duration(self) -> float:
        return (len(self.control_points) - 3) * self.knot_span

    def value(self, t) -> float:
        return wrap_pi(float(self._spline().position(t)))

    def value_unwrapped(self, t):
        return self._spline().position(t)

    def rate(self, t):
        return self._spline().velocity(t)

    def start_value(self) -> float:
        return float(self._spline().start_position())

    def end_value(self) -> float:
        return float(self._spline().end_position())

    def max_hull_rate(self) -> float:
        return float(np.abs(np.diff(self.control_points)).max() / self.knot_span)

    def dump_csv(self, path, rate_hz: float = 100.0) -> None:
        ts = np.arange(0.0, self.duration + 1e-9, 1.0 / rate_hz)
        sp = self._spline()
        with open(path, "w") as f:
            f.write("t,yaw,yaw_rate\n")
            for t in ts:
                f.write(f"{t:.4f},{wrap_pi(float(sp.position(t))):.6f},{float(sp.velocity(t)):.6f}\n")


@dataclass
class HeadingPlan:
    mode: str                       # "single" | "two_stage"
    segments: list
    middle_yaw: float | None = None
    split_ratio: float = 0.0

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def yaw_at(self, t: float) -> float:
        t = min(max(t, 0.0), self.duration)
        for seg in self.segments:
            if t <= seg.duration or seg is self.segments[-1]:
                return seg.value(min(t, seg.duration))
            t -= seg.duration
        return self.segments[-1].value(self.segments[-1].duration)

    def rate_at(self, t: float) -> float:
        t = min(max(t, 0.0), self.duration)
        for seg in self.segments:
            if t <= seg.duration or seg is self.segments[-1]:
                return float(seg.rate(min(t, seg.duration)))
            t -= seg.duration
        return 0.0


# ---------------------------------------------------------------------- selection


def viewpoints_in_local(vps: list[Viewpoint], target: Viewpoint, state: DroneState,
                        grid: OccupancyGrid, d_thr: float = 6.0) -> list[Viewpoint]:
    """Viewpoints near the drone, visible from it, and ahead relative to the target."""
    p0 = state.position
    to_target = target.position - p0
    out = []
    for vp in vps:
        rel = vp.position - p0
        if float(np.linalg.norm(rel)) >= d_thr:
            continue
        if not _ahead_of(rel, to_target):
            continue
        if not grid.line_of_sight_exact(p0, vp.position):
            continue
        out.append(vp)
    return out


def _ahead_of(rel: np.ndarray, to_target: np.ndarray) -> bool:
    na = float(np.linalg.norm(rel))
    nb = float(np.linalg.norm(to_target))
    if na < 1e-9 or nb < 1e-9:
        return True
    cosang = float(np.dot(rel, to_target)) / (na * nb)
    return math.acos(min(1.0, max(-1.0, cosang))) < math.pi / 2.0


def find_middle_yaw(local_vps: list[Viewpoint], current_yaw: float,
                    current_pos) -> float:
    """Yaw among the local viewpoints with the largest wrapped change from the
    current yaw; ties go to the viewpoint nearest the current position."""
    if len(local_vps) < 2:
        raise ValueError("middle yaw needs at least two local viewpoints")
    current_pos = np.asarray(current_pos, dtype=float)
    best = None
    for i, vp in enumerate(local_vps):
        change = wrapped_abs_diff(vp.yaw, current_yaw)
        dist = float(np.linalg.norm(vp.position - current_pos))
        key = (-change, dist, i)
        if best is None or key < best[0]:
            best = (key, vp.yaw)
    return best[1]


def two_stage_min_time(yaw0: float, yaw_mid: float, yaw_end: float,
                       yaw_rate_max: float, tau: float):
    """Minimum total time for the two heading changes, its split, and the ratio.

    Returns (t1, t2, t_min, ratio) with t_min = tau*(t1+t2) and
    ratio = t1/t_min (0 when both changes are zero).
    """
    if yaw_rate_max <= 0:
        raise ValueError("yaw_rate_max must be positive")
    if tau < 1.0:
        raise ValueError("tau must be >= 1")
    t1 = wrapped_abs_diff(yaw_mid, yaw0) / yaw_rate_max
    t2 = wrapped_abs_diff(yaw_end, yaw_mid) / yaw_rate_max
    t_min = tau * (t1 + t2)
    ratio = t1 / t_min if t_min > 0 else 0.0
    return t1, t2, t_min, ratio


def single_min_time(yaw0: float, yaw_end: float, yaw_rate_max: float) -> float:
    return wrapped_abs_diff(yaw_end, yaw0) / yaw_rate_max


def min_heading_time(vps, target: Viewpoint, state: DroneState, grid: OccupancyGrid,
                     yaw_rate_max: float, tau: float, d_thr: float = 6.0,
                     two_stage: bool = True) -> float:
    """Minimum-flight-time floor the position planner must respect."""
    if two_stage:
        local = viewpoints_in_local(vps, target, state, grid, d_thr)
        if len(local) > 1:
            ym = find_middle_yaw(local, state.yaw, state.position)
            _, _, t_min, _ = two_stage_min_time(state.yaw, ym, target.yaw,
                                                yaw_rate_max, tau)
            if t_min > 0:
                return t_min
    return single_min_time(state.yaw, target.yaw, yaw_rate_max)


# ---------------------------------------------------------------------- planning


def plan_heading(vps, target: Viewpoint, state: DroneState, t_real: float,
                 grid: OccupancyGrid, yaw_rate_max: float, yaw_acc_max: float,
                 tau: float = 1.3, d_thr: float = 6.0, two_stage: bool = True,
                 weights=DEFAULT_WEIGHTS) -> HeadingPlan:
    """Choose single vs two-stage heading and optimize the yaw spline(s).

    Two-stage applies when more than one local viewpoint exists and the flight
    duration t_real covers the minimum time for both heading changes; the split
    point gets duration t_real*ratio. Otherwise one segment spans t_real.
    """
    yaw0 = state.yaw
    yaw_n = target.yaw
    if two_stage:
        local = viewpoints_in_local(vps, target, state, grid, d_thr)
        if len(local) > 1:
            ym = find_middle_yaw(local, yaw0, state.position)
            t1, t2, t_min, ratio = two_stage_min_time(yaw0, ym, yaw_n, yaw_rate_max, tau)
            if t_min > 1e-9 and 1e-6 < ratio < 1.0 - 1e-6 and t_real >= t_min:
                d1 = t_real * ratio
                d2 = t_real * (1.0 - ratio)
                mid = yaw0 + shortest_signed_delta(yaw0, ym)
                seg1 = optimize_yaw(yaw0, mid, d1, yaw_rate_max, yaw_acc_max, weights)
                end = mid + shortest_signed_delta(mid, yaw_n)
                seg2 = optimize_yaw(mid, end, d2, yaw_rate_max, yaw_acc_max, weights)
                return HeadingPlan("two_stage", [seg1, seg2], middle_yaw=wrap_pi(ym),
                                   split_ratio=ratio)
    seg = optimize_yaw(yaw0, yaw0 + shortest_signed_delta(yaw0, yaw_n), t_real,
                       yaw_rate_max, yaw_acc_max, weights)
    return HeadingPlan("single", [seg])


# ---------------------------------------------------------------------- optimizer


def yaw_cost_and_grad(ctrl: np.ndarray, knot_span: float, yaw_start: float,
                      yaw_end: float, yaw_rate_max: float, yaw_acc_max: float,
                      weights=DEFAULT_WEIGHTS):
    """Objective for the yaw spline: smoothness, soft endpoint attachment and
    one-sided rate/acceleration penalties. Returns (cost, gradient)."""
    g1, g2, g3, g4 = weights
    q = np.asarray(ctrl, dtype=float)
    n = len(q)
    grad = np.zeros(n)
    cost = 0.0

    # Smoothness: squared third-order differences.
    if n >= 4:
        r = q[3:] - 3 * q[2:-1] + 3 * q[1:-2] - q[:-3]
        cost += g1 * float(np.dot(r, r))
        grad[:-3] += g1 * 2 * r * (-1.0)
        grad[1:-2] += g1 * 2 * r * 3.0
        grad[2:-1] += g1 * 2 * r * (-3.0)
        grad[3:] += g1 * 2 * r * 1.0

    # Soft endpoint attachment (squared residuals).
    e0 = (q[0] + 4 * q[1] + q[2]) / 6.0 - yaw_start
    cost += g2 * e0 * e0
    grad[0] += g2 * 2 * e0 / 6.0
    grad[1] += g2 * 2 * e0 * 4.0 / 6.0
    grad[2] += g2 * 2 * e0 / 6.0
    e1 = (q[-3] + 4 * q[-2] + q[-1]) / 6.0 - yaw_end
    cost += g3 * e1 * e1
    grad[-3] += g3 * 2 * e1 / 6.0
    grad[-2] += g3 * 2 * e1 * 4.0 / 6.0
    grad[-1] += g3 * 2 * e1 / 6.0

    # One-sided rate/acceleration penalties on derivative control points.
    v = np.diff(q) / knot_span
    over = np.abs(v) - yaw_rate_max
    act = over > 0
    if np.any(act):
        s = np.sign(v[act]) * 2 * over[act] / knot_span
        cost += g4 * float(np.dot(over[act], over[act]))
        idx = np.nonzero(act)[0]
        np.add.at(grad, idx + 1, g4 * s)
        np.add.at(grad, idx, -g4 * s)
    a = np.diff(q, n=2) / knot_span**2
    over_a = np.abs(a) - yaw_acc_max
    act_a = over_a > 0
    if np.any(act_a):
        s = np.sign(a[act_a]) * 2 * over_a[act_a] / knot_span**2
        cost += g4 * float(np.dot(over_a[act_a], over_a[act_a]))
        idx = np.nonzero(act_a)[0]
        np.add.at(grad, idx, g4 * s)
        np.add.at(grad, idx + 1, -2 * g4 * s)
        np.add.at(grad, idx + 2, g4 * s)
    return cost, grad


def optimize_yaw(yaw_start: float, yaw_end: float, duration: float,
                 yaw_rate_max: float, yaw_acc_max: float,
                 weights=DEFAULT_WEIGHTS, max_iters: int = 200) -> YawTrajectory:
    """Gradient descent with backtracking line search from a linear ramp.

    yaw_end is taken as already unwrapped relative to yaw_start.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n_ctrl = max(6, int(math.ceil(duration / 0.3)) + 3)
    dt = duration / (n_ctrl - 3)
    slope = (yaw_end - yaw_start) / (n_ctrl - 3)
    q = yaw_start + slope * (np.arange(n_ctrl) - 1.0)

    cost, grad = yaw_cost_and_grad(q, dt, yaw_start, yaw_end, yaw_rate_max,
                                   yaw_acc_max, weights)
    converged = False
    step = 1.0
    for _ in range(max_iters):
        gnorm2 = float(np.dot(grad, grad))
        if gnorm2 < 1e-16:
            converged = True
            break
        alpha = step
        accepted = False
        while alpha > 1e-14:
            q_new = q - alpha * grad
            c_new, g_new = yaw_cost_and_grad(q_new, dt, yaw_start, yaw_end,
                                             yaw_rate_max, yaw_acc_max, weights)
            if c_new <= cost - 1e-4 * alpha * gnorm2:
                q, cost, grad = q_new, c_new, g_new
                step = alpha * 2.0
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
    return YawTrajectory(q, dt, converged=converged)
