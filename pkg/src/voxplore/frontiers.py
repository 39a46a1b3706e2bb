"""Frontier detection, incremental clustering, and candidate viewpoint sampling.

A frontier cell is a known-Free voxel with at least one Unknown 6-neighbor.
Clusters are 26-connected components of frontier cells, split along their
principal axis while their bounding-box diagonal exceeds a threshold. Updates
are incremental: only components touched by a changed map region are dissolved
and re-detected, and the result is guaranteed to equal a from-scratch pass.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .grid import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

_NEIGHBORS_6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
_NEIGHBORS_26 = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


@dataclass(frozen=True, eq=False)
class Viewpoint:
    """Candidate sensor pose from which a cluster is observable."""

    position: np.ndarray
    yaw: float
    coverage_count: int


@dataclass(eq=False)
class FrontierCluster:
    id: int
    cells: np.ndarray               # (n, 3) int indices
    average: np.ndarray             # mean of cell centers, m
    bbox: tuple                     # (lo_idx, hi_idx) inclusive
    viewpoints: list = field(default_factory=list)
    viewpoint_version: int = 0

    @property
    def dormant(self) -> bool:
        return len(self.viewpoints) == 0

    @property
    def best_viewpoint(self) -> Viewpoint:
        return self.viewpoints[0]

    def cell_set(self) -> frozenset:
        return frozenset(map(tuple, self.cells.tolist()))


@dataclass
class ViewpointConfig:
    min_radius: float = 1.0
    radius_count: int = 4
    angle_step_deg: float = 30.0
    max_per_cluster: int = 3
    coverage_samples: int = 32


class FrontierManager:
    """Owns the live cluster set; mutated only between planner ticks."""

    def __init__(self, sensor_fov_h: float, sensor_fov_v: float, sensor_range: float,
                 split_diagonal: float = 3.0, vp_config: ViewpointConfig | None = None):
        self.fov_h = sensor_fov_h
        self.fov_v = sensor_fov_v
        self.sensor_range = sensor_range
        self.split_diagonal = split_diagonal
        self.vp = vp_config or ViewpointConfig()
        self._clusters: dict[int, FrontierCluster] = {}
        self._owner: dict[tuple, int] = {}
        self._next_id = 1

    # ------------------------------------------------------------------ queries

    def clusters(self) -> list[FrontierCluster]:
        return [self._clusters[i] for i in sorted(self._clusters)]

    def active_clusters(self) -> list[FrontierCluster]:
        return [c for c in self.clusters() if not c.dormant]

    def get(self, cluster_id: int) -> FrontierCluster | None:
        return self._clusters.get(cluster_id)

    # ------------------------------------------------------------------ update

    def update(self, grid: OccupancyGrid, changed_box) -> list[FrontierCluster]:
        """Refresh clusters after map changes inside `changed_box` ((lo, hi) inclusive).

        Dissolves every cluster whose 26-connected component gained or lost a
        cell, re-detects and re-splits those components, and leaves the rest
        untouched (keeping their ids). Returns the active cluster list.
        """
        if changed_box is not None:
            lo = np.maximum(np.asarray(changed_box[0], dtype=int) - 1, 0)
            hi = np.minimum(np.asarray(changed_box[1], dtype=int) + 1, grid.dims - 1)
            fmask = _frontier_mask(grid)
            view = fmask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
            seeds = {(int(c[0] + lo[0]), int(c[1] + lo[1]), int(c[2] + lo[2]))
                     for c in np.argwhere(view)}
            dissolved = self._dissolve_touched(lo, hi)
            visited = self._closure(fmask, seeds, dissolved)
            components = _connected_components(visited)
            pieces = []
            for comp in components:
                pieces.extend(self._split(grid, np.array(sorted(comp))))
            for cells in pieces:
                self._adopt(grid, cells, dissolved)
        self._recheck_viewpoints(grid, changed_box)
        return self.active_clusters()

    def _dissolve_touched(self, lo, hi) -> dict[int, FrontierCluster]:
        dissolved = {}
        for cid, cluster in list(self._clusters.items()):
            blo, bhi = cluster.bbox
            if np.any(bhi < lo) or np.any(blo > hi):
                continue
            inside = np.all((cluster.cells >= lo) & (cluster.cells <= hi), axis=1)
            if np.any(inside):
                dissolved[cid] = cluster
                self._remove(cid)
        return dissolved

    def _closure(self, fmask, seeds: set, dissolved: dict) -> set:
        """Grow seeds into full 26-connected frontier components, dissolving any
        surviving cluster the growth touches."""
        dims = fmask.shape
        queue = deque()
        visited = set()
        for cluster in dissolved.values():
            for c in map(tuple, cluster.cells.tolist()):
                if c not in visited and fmask[c]:
                    visited.add(c)
                    queue.append(c)
        for c in seeds:
            if c not in visited:
                visited.add(c)
                queue.append(c)
        while queue:
            c = queue.popleft()
            for d in _NEIGHBORS_26:
                n = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
                if n in visited:
                    continue
                if not (0 <= n[0] < dims[0] and 0 <= n[1] < dims[1]
                        and 0 <= n[2] < dims[2]):
                    continue
                owner = self._owner.get(n)
                if owner is not None:
                    cluster = self._clusters[owner]
                    dissolved[owner] = cluster
                    self._remove(owner)
                    for oc in map(tuple, cluster.cells.tolist()):
                        if oc not in visited and fmask[oc]:
                            visited.add(oc)
                            queue.append(oc)
                    continue
                if fmask[n]:
                    visited.add(n)
                    queue.append(n)
        return visited

    def _split(self, grid, cells: np.ndarray) -> list[np.ndarray]:
        centers = grid.origin[None, :] + (cells + 0.5) * grid.resolution
        lo = centers.min(axis=0)
        hi = centers.max(axis=0)
        if np.linalg.norm(hi - lo) <= self.split_diagonal or len(cells) < 2:
            return [cells]
        mean = centers.mean(axis=0)
        cov = np.cov((centers - mean).T)
        w, v = np.linalg.eigh(np.atleast_2d(cov))
        axis = v[:, int(np.argmax(w))]
        nz = np.nonzero(np.abs(axis) > 1e-12)[0]
        if nz.size and axis[nz[0]] < 0:
            axis = -axis
        proj = (centers - mean) @ axis
        left = cells[proj <= 0.0]
        right = cells[proj > 0.0]
        if len(left) == 0 or len(right) == 0:
            return [cells]
        return self._split(grid, left) + self._split(grid, right)

    def _adopt(self, grid, cells: np.ndarray, dissolved: dict) -> None:
        key = frozenset(map(tuple, cells.tolist()))
        cid = None
        prior = None
        for old_id, old in dissolved.items():
            if old_id not in self._clusters and old.cell_set() == key:
                cid = old_id
                prior = old
                break
        if cid is None:
            cid = self._next_id
            self._next_id += 1
        centers = grid.origin[None, :] + (cells + 0.5) * grid.resolution
        cluster = FrontierCluster(
            id=cid,
            cells=cells,
            average=centers.mean(axis=0),
            bbox=(cells.min(axis=0), cells.max(axis=0)),
        )
        reused = False
        if prior is not None and prior.viewpoints:
            # Identical cell set: keep the old viewpoints if the best one still
            # stands in valid space and can still see the cluster.
            best = prior.viewpoints[0]
            cov = self._coverage_sample(cluster)
            centers = grid.origin[None, :] + (cov + 0.5) * grid.resolution
            if (self._viewpoint_still_valid(best, grid)
                    and self._sees_cluster_exact(best.position, best.yaw, centers, grid)):
                cluster.viewpoints = prior.viewpoints
                cluster.viewpoint_version = prior.viewpoint_version
                reused = True
        if not reused:
            cluster.viewpoints = self.generate_viewpoints(cluster, grid)
        self._clusters[cid] = cluster
        for c in key:
            self._owner[c] = cid

    def _remove(self, cid: int) -> None:
        cluster = self._clusters.pop(cid)
        for c in map(tuple, cluster.cells.tolist()):
            self._owner.pop(c, None)

    def _recheck_viewpoints(self, grid, changed_box) -> None:
        for cluster in self.clusters():
            if cluster.dormant:
                # Dormancy can only end when the map changed near the cluster's
                # viewpoint standoff region; skip the costly resample otherwise.
                if changed_box is None or not self._near_box(cluster, changed_box, grid):
                    continue
                vps = self.generate_viewpoints(cluster, grid)
                if vps:
                    cluster.viewpoints = vps
                    cluster.viewpoint_version += 1
            elif changed_box is not None and not all(
                self._viewpoint_still_valid(vp, grid) for vp in cluster.viewpoints
            ):
                cluster.viewpoints = self.generate_viewpoints(cluster, grid)
                cluster.viewpoint_version += 1

    def _near_box(self, cluster, changed_box, grid) -> bool:
        margin = int(math.ceil((0.8 * self.sensor_range + 0.5) / grid.resolution))
        lo, hi = cluster.bbox
        return bool(np.all(changed_box[0] <= hi + margin)
                    and np.all(changed_box[1] >= lo - margin))

    def _viewpoint_still_valid(self, vp: Viewpoint, grid) -> bool:
        idx = grid.world_to_index(vp.position)
        if not grid.index_in_grid(idx):
            return False
        if grid.cells[tuple(idx)] != FREE:
            return False
        return not _occupied_near(grid, idx)

    # ------------------------------------------------------------------ viewpoints

    def generate_viewpoints(self, cluster: FrontierCluster, grid: OccupancyGrid) -> list[Viewpoint]:
        """Sample poses on concentric rings around the cluster average point.

        Keeps Free, collision-clear candidates with line of sight to the average,
        scores them by how many cluster cells the sensor would cover, and returns
        at most max_per_cluster, best first. Empty when the cluster is dormant.
        """
        avg = cluster.average
        radii = np.linspace(self.vp.min_radius, 0.8 * self.sensor_range, self.vp.radius_count)
        angles = np.radians(np.arange(0.0, 360.0, self.vp.angle_step_deg))
        cov_cells = self._coverage_sample(cluster)
        cov_centers = grid.origin[None, :] + (cov_cells + 0.5) * grid.resolution

        # All ring candidates screened in one batch: position validity, then a
        # sampled line of sight to the average point.
        rr, aa = np.meshgrid(np.arange(len(radii)), np.arange(len(angles)), indexing="ij")
        rr, aa = rr.ravel(), aa.ravel()
        pos_all = avg[None, :] + np.stack(
            [radii[rr] * np.cos(angles[aa]), radii[rr] * np.sin(angles[aa]),
             np.zeros(rr.size)], axis=1)
        valid = self._positions_ok(pos_all, grid)
        if np.any(valid):
            ts = np.linspace(0.0, 1.0, 24)
            seg = pos_all[valid][:, None, :] + ts[None, :, None] * (avg[None, :] - pos_all[valid])[:, None, :]
            idx = grid._indices_of(seg.reshape(-1, 3)).reshape(-1, 24, 3)
            states = grid.cells[idx[..., 0], idx[..., 1], idx[..., 2]]
            valid[np.nonzero(valid)[0]] &= ~np.any(states == OCCUPIED, axis=1)

        scored = []
        for k in np.nonzero(valid)[0]:
            pos = pos_all[k]
            yaw = math.atan2(avg[1] - pos[1], avg[0] - pos[0])
            count = self._coverage_count(pos, yaw, cov_centers, grid)
            if count >= 1:
                scored.append((-count, int(rr[k]), int(aa[k]), pos, yaw))
        scored.sort(key=lambda s: s[:3])

        out = []
        for neg_count, _, _, pos, yaw in scored:
            if len(out) >= self.vp.max_per_cluster:
                break
            if self._sees_cluster_exact(pos, yaw, cov_centers, grid):
                out.append(Viewpoint(position=pos, yaw=yaw, coverage_count=-neg_count))
        return out

    def _coverage_sample(self, cluster: FrontierCluster) -> np.ndarray:
        cells = cluster.cells
        if len(cells) <= self.vp.coverage_samples:
            return cells
        stride = len(cells) // self.vp.coverage_samples + 1
        return cells[::stride]

    def _positions_ok(self, pos: np.ndarray, grid) -> np.ndarray:
        margin = grid.resolution
        ok = (np.all(pos >= grid.bounds.box_min[None, :] + margin, axis=1)
              & np.all(pos <= grid.bounds.box_max[None, :] - margin, axis=1))
        idx = grid._indices_of(pos)
        ok &= grid.cells[idx[:, 0], idx[:, 1], idx[:, 2]] == FREE
        for k in np.nonzero(ok)[0]:
            if _occupied_near(grid, idx[k]):
                ok[k] = False
        return ok

    def _position_ok(self, pos, grid) -> bool:
        margin = grid.resolution
        if not (np.all(pos >= grid.bounds.box_min + margin)
                and np.all(pos <= grid.bounds.box_max - margin)):
            return False
        idx = grid.world_to_index(pos)
        if grid.cells[tuple(idx)] != FREE:
            return False
        return not _occupied_near(grid, idx)

    def _fov_mask(self, pos, yaw, centers) -> np.ndarray:
        rel = centers - pos[None, :]
        dist = np.linalg.norm(rel, axis=1)
        horiz = np.arctan2(rel[:, 1], rel[:, 0]) - yaw
        horiz = np.abs(np.arctan2(np.sin(horiz), np.cos(horiz)))
        elev = np.abs(np.arctan2(rel[:, 2], np.linalg.norm(rel[:, :2], axis=1) + 1e-12))
        return (dist <= self.sensor_range) & (horiz <= self.fov_h / 2) & (elev <= self.fov_v / 2)

    def _coverage_count(self, pos, yaw, centers, grid) -> int:
        ok = self._fov_mask(pos, yaw, centers)
        if not np.any(ok):
            return 0
        # One batched sampled line-of-sight pass over every candidate cell.
        targets = centers[ok]
        ts = np.linspace(0.0, 1.0, 32)
        pts = pos[None, None, :] + ts[None, :, None] * (targets - pos[None, :])[:, None, :]
        idx = grid._indices_of(pts.reshape(-1, 3)).reshape(len(targets), 32, 3)
        states = grid.cells[idx[..., 0], idx[..., 1], idx[..., 2]]
        clear = ~np.any(states == OCCUPIED, axis=1)
        return int(np.count_nonzero(clear))

    def _sees_cluster_exact(self, pos, yaw, centers, grid) -> bool:
        ok = self._fov_mask(pos, yaw, centers)
        if not np.any(ok):
            return False
        targets = centers[ok]
        order = np.argsort(np.linalg.norm(targets - pos[None, :], axis=1))
        for i in order:
            if _los_to_cell_exact(grid, pos, targets[i]):
                return True
        return False

    # ------------------------------------------------------------------ export

    def dump_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("cluster_id,cx,cy,cz,n_cells,n_viewpoints\n")
            for c in self.clusters():
                f.write(
                    f"{c.id},{c.average[0]:.6f},{c.average[1]:.6f},{c.average[2]:.6f},"
                    f"{len(c.cells)},{len(c.viewpoints)}\n"
                )


def _frontier_mask(grid: OccupancyGrid) -> np.ndarray:
    """Vectorized frontier predicate over the whole grid."""
    cells = grid.cells
    unk = cells == UNKNOWN
    adj = np.zeros_like(unk)
    adj[1:, :, :] |= unk[:-1, :, :]
    adj[:-1, :, :] |= unk[1:, :, :]
    adj[:, 1:, :] |= unk[:, :-1, :]
    adj[:, :-1, :] |= unk[:, 1:, :]
    adj[:, :, 1:] |= unk[:, :, :-1]
    adj[:, :, :-1] |= unk[:, :, 1:]
    return (cells == FREE) & adj


def _is_frontier(grid: OccupancyGrid, cell: tuple) -> bool:
    i, j, k = cell
    if not (0 <= i < grid.dims[0] and 0 <= j < grid.dims[1] and 0 <= k < grid.dims[2]):
        return False
    if grid.cells[i, j, k] != FREE:
        return False
    for d in _NEIGHBORS_6:
        ni, nj, nk = i + d[0], j + d[1], k + d[2]
        if (0 <= ni < grid.dims[0] and 0 <= nj < grid.dims[1] and 0 <= nk < grid.dims[2]
                and grid.cells[ni, nj, nk] == UNKNOWN):
            return True
    return False


def _occupied_near(grid: OccupancyGrid, idx) -> bool:
    """Any Occupied cell within the 3x3x3 neighborhood (one-voxel clearance)."""
    lo = np.maximum(np.asarray(idx) - 1, 0)
    hi = np.minimum(np.asarray(idx) + 2, grid.dims)
    block = grid.cells[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    return bool(np.any(block == OCCUPIED))


def _los_to_cell_exact(grid, pos, target) -> bool:
    cells = grid.raycast(pos, target)
    target_cell = cells[-1]
    for c in cells:
        if c != target_cell and grid.cells[c] == OCCUPIED:
            return False
    return True


def _connected_components(cells: set) -> list[set]:
    remaining = set(cells)
    out = []
    while remaining:
        seed = min(remaining)
        comp = {seed}
        remaining.discard(seed)
        queue = deque([seed])
        while queue:
            c = queue.popleft()
            for d in _NEIGHBORS_26:
                n = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
                if n in remaining:
                    remaining.discard(n)
                    comp.add(n)
                    queue.append(n)
        out.append(comp)
    return out


def detect_all(grid: OccupancyGrid, manager_template: FrontierManager) -> list[frozenset]:
    """From-scratch frontier partition (cell sets only); test oracle for updates."""
    fresh = FrontierManager(
        manager_template.fov_h, manager_template.fov_v, manager_template.sensor_range,
        manager_template.split_diagonal, manager_template.vp,
    )
    fresh.update(grid, (np.zeros(3, dtype=int), grid.dims - 1))
    return [c.cell_set() for c in fresh.clusters()]
