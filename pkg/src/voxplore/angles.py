"""Yaw angle helpers. All headings live in (-pi, pi]; splines work on unwrapped values."""
from __future__ import annotations

import math


def wrap_pi(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def wrapped_abs_diff(a: float, b: float) -> float:
    """Smallest absolute difference between two angles, in [0, pi]."""
    d = abs(wrap_pi(a) - wrap_pi(b))
    return min(d, 2.0 * math.pi - d)


def shortest_signed_delta(start: float, end: float) -> float:
    """Signed rotation of minimum magnitude taking `start` to `end`."""
    return wrap_pi(end - start)
