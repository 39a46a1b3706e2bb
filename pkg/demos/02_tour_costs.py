"""How the tour cost matrix orders frontier clusters.

Two frontier-level terms shape the first matrix row beyond plain travel time:
clusters hugging the exploration boundary get cheaper (skipping them now means
a long trip back later), and clusters backed by a shallow unknown pocket get a
bonus (they are quick to finish while nearby). This script builds a small scene
where those terms flip the visit order.
"""
import numpy as np

from voxplore import (
    DroneState,
    DynamicLimits,
    ExplorationBounds,
    FrontierCluster,
    OccupancyGrid,
    TourConfig,
    Viewpoint,
    build_cost_matrix,
    solve_atsp,
)
from voxplore.grid import FREE


def cluster(cid, average, vp_pos, vp_yaw):
    average = np.asarray(average, float)
    return FrontierCluster(
        id=cid, cells=np.array([[0, 0, 0]]), average=average,
        bbox=(np.zeros(3, int), np.zeros(3, int)),
        viewpoints=[Viewpoint(np.asarray(vp_pos, float), vp_yaw, 1)],
    )


grid = OccupancyGrid(ExplorationBounds((0, 0, 0), (30, 16, 2)), 0.15)
grid.cells[:] = FREE
limits = DynamicLimits()
state = DroneState(np.array([15.0, 4.0, 1.0]), yaw=0.0)

# Boundary cluster: sits by the y=0 face. Interior cluster: slightly closer.
boundary = cluster(1, (15.0, 0.1, 1.0), (15.0, 1.0, 1.0), 0.0)
interior = cluster(2, (15.0, 6.95, 1.0), (15.0, 6.95, 1.0), 0.0)

for label, cfg in [("edge priority ON ", TourConfig(bottom_ray=False)),
                   ("edge priority OFF", TourConfig(bottom_ray=False, edge_priority=False))]:
    matrix = build_cost_matrix(state, [boundary, interior], grid, cfg, limits)
    order = solve_atsp(matrix)
    names = {1: "boundary", 2: "interior"}
    print(f"{label}: row0 = {np.round(matrix.entries[0, 1:], 3)} "
          f"-> visit {[names[matrix.cluster_ids[i - 1]] for i in order]}")

matrix.dump("/tmp/tour_matrix.txt")
print("wrote /tmp/tour_matrix.txt")
