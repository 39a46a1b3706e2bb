"""Uniform cubic B-splines for yaw profiles and position trajectories.

A spline with N+1 control points and knot span dt covers a duration of
(N+1-3)*dt. Derivative control points are first differences scaled by 1/dt, so
bounding those (convex-hull property) bounds the true velocity/acceleration.
"""
from __future__ import annotations

import numpy as np


class UniformBspline:
    """Degree-3 uniform B-spline over scalar or vector control points."""

    def __init__(self, control_points: np.ndarray, knot_span: float):
        self.ctrl = np.asarray(control_points, dtype=float)
        if self.ctrl.shape[0] < 4:
            raise ValueError("cubic spline needs at least 4 control points")
        if knot_span <= 0.0:
            raise ValueError("knot span must be positive")
        self.dt = float(knot_span)

    @property
    def duration(self) -> float:
        return (self.ctrl.shape[0] - 3) * self.dt

    def _span(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration - 1e-12)
        i = np.floor(t / self.dt).astype(int)
        i = np.minimum(i, self.ctrl.shape[0] - 4)
        u = t / self.dt - i
        return i, u

    def position(self, t):
        i, u = self._span(t)
        b0 = (1 - u) ** 3 / 6.0
        b1 = (3 * u**3 - 6 * u**2 + 4) / 6.0
        b2 = (-3 * u**3 + 3 * u**2 + 3 * u + 1) / 6.0
        b3 = u**3 / 6.0
        q = self.ctrl
        out = (_w(b0) * q[i] + _w(b1) * q[i + 1] + _w(b2) * q[i + 2] + _w(b3) * q[i + 3])
        return out

    def velocity(self, t):
        i, u = self._span(t)
        v = np.diff(self.ctrl, axis=0) / self.dt
        c0 = (1 - u) ** 2 / 2.0
        c1 = (-2 * u**2 + 2 * u + 1) / 2.0
        c2 = u**2 / 2.0
        return _w(c0) * v[i] + _w(c1) * v[i + 1] + _w(c2) * v[i + 2]

    def acceleration(self, t):
        i, u = self._span(t)
        a = np.diff(self.ctrl, n=2, axis=0) / self.dt**2
        return _w(1 - u) * a[i] + _w(u) * a[i + 1]

    def velocity_control_points(self) -> np.ndarray:
        return np.diff(self.ctrl, axis=0) / self.dt

    def acceleration_control_points(self) -> np.ndarray:
        return np.diff(self.ctrl, n=2, axis=0) / self.dt**2

    def start_position(self):
        q = self.ctrl
        return (q[0] + 4.0 * q[1] + q[2]) / 6.0

    def end_position(self):
        q = self.ctrl
        return (q[-3] + 4.0 * q[-2] + q[-1]) / 6.0


def _w(b):
    """Broadcast a basis weight against vector-valued control points."""
    b = np.asarray(b)
    return b[..., None] if b.ndim else b


def start_pinned_control_points(p0, v0, a0, dt: float):
    """First three control points that reproduce an exact start state.

    Solves position (q0+4q1+q2)/6 = p0, velocity (q2-q0)/(2 dt) = v0 and
    acceleration (q0-2q1+q2)/dt^2 = a0.
    """
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    q1 = p0 - (dt**2 / 6.0) * a0
    s = 6.0 * p0 - 4.0 * q1
    d = 2.0 * dt * v0
    q0 = (s - d) / 2.0
    q2 = (s + d) / 2.0
    return q0, q1, q2


def fit_control_points(times: np.ndarray, samples: np.ndarray, n_ctrl: int, dt: float) -> np.ndarray:
    """Least-squares control points so the spline tracks (times, samples)."""
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    duration = (n_ctrl - 3) * dt
    t = np.clip(times, 0.0, duration - 1e-12)
    i = np.minimum(np.floor(t / dt).astype(int), n_ctrl - 4)
    u = t / dt - i
    basis = np.zeros((len(t), n_ctrl))
    rows = np.arange(len(t))
    basis[rows, i] = (1 - u) ** 3 / 6.0
    basis[rows, i + 1] = (3 * u**3 - 6 * u**2 + 4) / 6.0
    basis[rows, i + 2] = (-3 * u**3 + 3 * u**2 + 3 * u + 1) / 6.0
    basis[rows, i + 3] = u**3 / 6.0
    sol, *_ = np.linalg.lstsq(basis, samples, rcond=None)
    return sol
