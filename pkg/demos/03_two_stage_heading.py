"""Two-stage heading: sweep an extra viewpoint's direction during one flight.

When several viewpoints cluster near the flight corridor, the yaw profile is
split: first turn to the viewpoint whose heading differs most from the current
one, then turn to the target heading. The split point lands at the fraction
T1/Tmin of the flight, so both turns stay within the yaw-rate limit.
"""
import math

import numpy as np

from voxplore import (
    DroneState,
    ExplorationBounds,
    OccupancyGrid,
    Viewpoint,
    find_middle_yaw,
    plan_heading,
    two_stage_min_time,
    viewpoints_in_local,
)
from voxplore.grid import FREE

grid = OccupancyGrid(ExplorationBounds((0, 0, 0), (12, 12, 3)), 0.15)
grid.cells[:] = FREE
state = DroneState(np.array([6.0, 6.0, 1.5]), yaw=0.0)

target = Viewpoint(np.array([9.0, 6.0, 1.5]), 0.3, 1)
side_a = Viewpoint(np.array([8.0, 8.0, 1.5]), 2.2, 1)
side_b = Viewpoint(np.array([8.5, 4.5, 1.5]), -0.9, 1)
vps = [target, side_a, side_b]

local = viewpoints_in_local(vps, target, state, grid, d_thr=6.0)
mid = find_middle_yaw(local, state.yaw, state.position)
t1, t2, t_min, ratio = two_stage_min_time(state.yaw, mid, target.yaw, 1.0, 1.3)
print(f"{len(local)} local viewpoints; middle yaw {mid:+.2f} rad")
print(f"T1={t1:.3f}s T2={t2:.3f}s Tmin={t_min:.3f}s split ratio R={ratio:.4f}")

t_real = 1.2 * t_min
plan = plan_heading(vps, target, state, t_real, grid, 1.0, 2.0)
print(f"flight time {t_real:.3f}s -> {plan.mode} plan, "
      f"boundary yaw {plan.segments[0].end_value():+.3f} (middle {mid:+.3f})")

print("\nsampled yaw profile (t, yaw):")
for t in np.linspace(0, plan.duration, 13):
    print(f"  {t:6.3f}  {plan.yaw_at(t):+7.3f}")

plan.segments[0].dump_csv("/tmp/yaw_stage1.csv")
plan.segments[1].dump_csv("/tmp/yaw_stage2.csv")
print("\nwrote /tmp/yaw_stage1.csv and /tmp/yaw_stage2.csv (100 Hz)")
