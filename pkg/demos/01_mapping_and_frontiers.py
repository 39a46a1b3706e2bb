"""Build a world, take a few depth scans, and watch frontier clusters form.

The occupancy grid starts fully Unknown. Each scan carves Free space up to the
first surface along every ray and marks the surface voxels Occupied. Frontier
cells (Free next to Unknown) are clustered and each cluster gets candidate
viewpoints the planner could fly to.
"""
import math

import numpy as np

from voxplore import FrontierManager, OccupancyGrid, SensorPose, make_world

world = make_world("office")
grid = OccupancyGrid(world.bounds, resolution=0.15)
manager = FrontierManager(math.radians(80), math.radians(60), 4.5)

# A short scripted walk through the first room, scanning as we go.
poses = [
    ((2.0, 2.0, 1.0), 0.0),
    ((3.5, 2.5, 1.0), 0.6),
    ((5.0, 3.5, 1.0), 1.2),
    ((6.0, 5.0, 1.0), 2.0),
]
for pos, yaw in poses:
    pose = SensorPose(np.array(pos), yaw, math.radians(80), math.radians(60), 4.5)
    changed = grid.integrate_scan(pose, world)
    box, _ = grid.consume_changes()
    clusters = manager.update(grid, box)
    known_pct = 100.0 * grid.known_cell_count / grid.cells.size
    print(f"scan at {pos} yaw={yaw:+.1f}: {changed:5d} cells changed, "
          f"{known_pct:5.1f}% known, {len(clusters)} active frontier clusters")

print("\ncluster summary (id, center, cells, viewpoints):")
for c in manager.clusters():
    tag = "dormant" if c.dormant else f"best vp yaw {c.best_viewpoint.yaw:+.2f} rad"
    print(f"  #{c.id}: center=({c.average[0]:5.2f},{c.average[1]:5.2f},{c.average[2]:4.2f}) "
          f"cells={len(c.cells):4d} vps={len(c.viewpoints)} ({tag})")

grid.save_snapshot("/tmp/office_snapshot.txt")
manager.dump_csv("/tmp/office_frontiers.csv")
print("\nwrote /tmp/office_snapshot.txt and /tmp/office_frontiers.csv")
