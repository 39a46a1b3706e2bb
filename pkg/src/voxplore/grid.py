"""Tri-state voxel occupancy grid with exact ray traversal and a simulated depth sensor.

Cells are Unknown until observed. A depth-camera scan carves Free space up to the
first surface along each ray and marks the surface voxel Occupied. Occupancy is
deterministic: Occupied is sticky and a Free cell is never demoted, so repeated
identical scans are no-ops and the known volume only grows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNKNOWN = 0
FREE = 1
OCCUPIED = 2
OUT_OF_BOUNDS = -1

_STATE_NAMES = {FREE: "free", OCCUPIED: "occupied"}
_STATE_FROM_NAME = {v: k for k, v in _STATE_NAMES.items()}


@dataclass(frozen=True)
class ExplorationBounds:
    """Axis-aligned box limiting the exploration volume."""

    box_min: np.ndarray
    box_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "box_min", np.asarray(self.box_min, dtype=float))
        object.__setattr__(self, "box_max", np.asarray(self.box_max, dtype=float))
        if not np.all(self.box_min < self.box_max):
            raise ValueError("bounds require box_min < box_max on every axis")

    @property
    def extent(self) -> np.ndarray:
        return self.box_max - self.box_min

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.box_min) and np.all(p <= self.box_max))

    def exit_distance(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Distance from an interior origin to the box surface along each direction.

        dirs: (n, 3) unit vectors. Returns (n,) distances.
        """
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = (self.box_max[None, :] - origin[None, :]) / dirs
            t_lo = (self.box_min[None, :] - origin[None, :]) / dirs
        t_far = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
        t_far = np.where(np.isnan(t_far), np.inf, t_far)
        return np.maximum(t_far.min(axis=1), 0.0)


@dataclass(frozen=True)
class SensorPose:
    """Depth sensor pose and intrinsics: yaw-only orientation, pyramidal FOV."""

    position: np.ndarray
    yaw: float
    fov_h: float
    fov_v: float
    max_range: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not (0.0 < self.fov_h < math.pi and 0.0 < self.fov_v < math.pi):
            raise ValueError("fov_h and fov_v must be in (0, pi)")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")


class OccupancyGrid:
    """Dense tri-state voxel map over an exploration bounds box.

    Single-writer: only the simulation loop mutates the grid; snapshots taken with
    copy() are plain value objects safe to hand to planners.
    """

    def __init__(self, bounds: ExplorationBounds, resolution: float = 0.15):
        if resolution <= 0.0:
            raise ValueError("resolution must be positive")
        self.bounds = bounds
        self.resolution = float(resolution)
        self.origin = bounds.box_min.copy()
        self.dims = np.ceil(bounds.extent / resolution - 1e-9).astype(int)
        self.cells = np.full(tuple(self.dims), UNKNOWN, dtype=np.int8)
        # Accumulated between consume_changes() calls; read by the mission loop.
        self._pending_lo = None
        self._pending_hi = None
        self._new_occupied: list[tuple[int, int, int]] = []

    # ------------------------------------------------------------------ indexing

    def world_to_index(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        idx = np.floor((p - self.origin) / self.resolution).astype(int)
        # Points exactly on the max face belong to the last cell.
        return np.minimum(idx, self.dims - 1)

    def index_in_grid(self, idx) -> bool:
        idx = np.asarray(idx)
        return bool(np.all(idx >= 0) and np.all(idx < self.dims))

    def cell_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def classify(self, point) -> int:
        """State of the cell containing `point`, or OUT_OF_BOUNDS."""
        p = np.asarray(point, dtype=float)
        if not self.bounds.contains(p):
            return OUT_OF_BOUNDS
        i, j, k = self.world_to_index(p)
        return int(self.cells[i, j, k])

    def state_at(self, idx) -> int:
        if not self.index_in_grid(idx):
            return OUT_OF_BOUNDS
        i, j, k = idx
        return int(self.cells[i, j, k])

    @property
    def known_cell_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    @property
    def unknown_cell_count(self) -> int:
        return int(np.count_nonzero(self.cells == UNKNOWN))

    def known_volume(self) -> float:
        return self.known_cell_count * self.resolution**3

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.bounds, self.resolution)
        g.cells = self.cells.copy()
        return g

    # ------------------------------------------------------------------ raycast

    def raycast(self, start, end) -> list[tuple[int, int, int]]:
        """Every voxel the segment start->end traverses, in order.

        Exact amanatides-woo traversal. `end` is clipped to the bounds box;
        `start` must be inside. When the segment crosses a cell edge or corner
        exactly, both axes advance together so forward and reverse casts visit
        the same cell set.
        """
        a = np.asarray(start, dtype=float)
        b = np.asarray(end, dtype=float)
        if not self.bounds.contains(a):
            raise ValueError("raycast start point outside bounds")
        if not self.bounds.contains(b):
            b = self._clip_segment_end(a, b)

        cell = self.world_to_index(a)
        end_cell = self.world_to_index(b)
        out = [tuple(int(v) for v in cell)]
        if np.array_equal(cell, end_cell):
            return out

        d = b - a
        step = np.sign(d).astype(int)
        t_max = np.full(3, np.inf)
        t_delta = np.full(3, np.inf)
        for ax in range(3):
            if step[ax] != 0:
                boundary = self.origin[ax] + (cell[ax] + (step[ax] > 0)) * self.resolution
                t_max[ax] = (boundary - a[ax]) / d[ax]
                t_delta[ax] = self.resolution / abs(d[ax])

        max_steps = int(np.abs(end_cell - cell).sum()) + 3
        for _ in range(max_steps):
            t_min = t_max.min()
            advance = t_max <= t_min + 1e-12
            cell = cell + np.where(advance, step, 0)
            if np.any(cell < 0) or np.any(cell >= self.dims):
                # Endpoint sits exactly on a bounds face; stop at the end cell.
                break
            t_max = t_max + np.where(advance, t_delta, 0.0)
            out.append(tuple(int(v) for v in cell))
            if np.array_equal(cell, end_cell):
                return out
        if out[-1] != tuple(int(v) for v in end_cell):
            out.append(tuple(int(v) for v in end_cell))
        return out

    def _clip_segment_end(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = b - a
        t_end = 1.0
        for ax in range(3):
            if d[ax] > 0:
                t_end = min(t_end, (self.bounds.box_max[ax] - a[ax]) / d[ax])
            elif d[ax] < 0:
                t_end = min(t_end, (self.bounds.box_min[ax] - a[ax]) / d[ax])
        return a + max(t_end, 0.0) * d

    def line_of_sight(self, start, end, step_scale: float = 0.34) -> bool:
        """No Occupied cell along the sampled segment. Fast, sampling-based."""
        a = np.asarray(start, dtype=float)
        b = np.asarray(end, dtype=float)
        length = float(np.linalg.norm(b - a))
        if length < 1e-12:
            return self.classify(a) != OCCUPIED
        n = max(2, int(length / (self.resolution * step_scale)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        idx = self._indices_of(pts)
        states = self.cells[idx[:, 0], idx[:, 1], idx[:, 2]]
        return not np.any(states == OCCUPIED)

    def line_of_sight_exact(self, start, end) -> bool:
        """No Occupied cell on the exact voxel traversal between two points."""
        for c in self.raycast(start, end):
            if self.cells[c] == OCCUPIED:
                return False
        return True

    def _indices_of(self, pts: np.ndarray) -> np.ndarray:
        idx = np.floor((pts - self.origin[None, :]) / self.resolution).astype(np.int64)
        return np.clip(idx, 0, self.dims[None, :] - 1)

    # ------------------------------------------------------------------ sensing

    def integrate_scan(self, pose: SensorPose, world) -> int:
        """Insert one simulated depth scan. Returns the number of cells that changed.

        Rays span the FOV with angular steps small enough that adjacent rays are
        at most one voxel apart at max_range. Cells in front of each surface hit
        become Free, the hit voxel becomes Occupied, everything beyond stays
        Unknown. Occupied wins over Free inside a scan and is never overwritten.
        """
        if not self.bounds.contains(pose.position):
            raise ValueError("sensor pose outside exploration bounds")

        dirs = self._ray_fan(pose)
        depths = world.ray_depths(pose.position, dirs)
        t_bounds = self.bounds.exit_distance(pose.position, dirs)
        reach = np.minimum(pose.max_range, t_bounds)
        hit = depths <= reach + 1e-12
        carve = np.where(hit, depths, reach)

        step = self.resolution / 3.0
        n_steps = int(np.ceil(carve.max() / step)) + 1
        ts = np.arange(n_steps) * step
        sample_mask = ts[None, :] < carve[:, None] - 1e-9
        pts = pose.position[None, None, :] + dirs[:, None, :] * ts[None, :, None]
        free_idx = self._indices_of(pts[sample_mask])

        hit_pts = pose.position[None, :] + dirs[hit] * (depths[hit] + 1e-9)[:, None]
        occ_idx = self._indices_of(hit_pts) if hit_pts.size else np.empty((0, 3), dtype=np.int64)

        return self._apply_scan(free_idx, occ_idx)

    def _ray_fan(self, pose: SensorPose) -> np.ndarray:
        ang_step = self.resolution / pose.max_range
        n_az = int(math.ceil(pose.fov_h / ang_step)) + 1
        n_el = int(math.ceil(pose.fov_v / ang_step)) + 1
        az = np.linspace(-pose.fov_h / 2.0, pose.fov_h / 2.0, n_az) + pose.yaw
        el = np.linspace(-pose.fov_v / 2.0, pose.fov_v / 2.0, n_el)
        az_g, el_g = np.meshgrid(az, el, indexing="ij")
        cos_el = np.cos(el_g)
        dirs = np.stack(
            [cos_el * np.cos(az_g), cos_el * np.sin(az_g), np.sin(el_g)], axis=-1
        )
        return dirs.reshape(-1, 3)

    def _apply_scan(self, free_idx: np.ndarray, occ_idx: np.ndarray) -> int:
        changed = 0
        flat_dims = (int(self.dims[0]), int(self.dims[1]), int(self.dims[2]))
        occ_flat = np.unique(np.ravel_multi_index(occ_idx.T, flat_dims)) if occ_idx.size else None
        free_flat = np.unique(np.ravel_multi_index(free_idx.T, flat_dims)) if free_idx.size else None

        cells_flat = self.cells.reshape(-1)
        touched = []
        if occ_flat is not None:
            newly = occ_flat[cells_flat[occ_flat] != OCCUPIED]
            cells_flat[newly] = OCCUPIED
            changed += newly.size
            touched.append(occ_flat)
            if newly.size:
                coords = np.stack(np.unravel_index(newly, flat_dims), axis=1)
                self._new_occupied.extend(map(tuple, coords.tolist()))
        if free_flat is not None:
            if occ_flat is not None:
                free_flat = np.setdiff1d(free_flat, occ_flat, assume_unique=True)
            newly = free_flat[cells_flat[free_flat] == UNKNOWN]
            cells_flat[newly] = FREE
            changed += newly.size
            touched.append(free_flat)

        if touched:
            all_idx = np.stack(np.unravel_index(np.concatenate(touched), flat_dims), axis=1)
            lo = all_idx.min(axis=0)
            hi = all_idx.max(axis=0)
            if self._pending_lo is None:
                self._pending_lo, self._pending_hi = lo, hi
            else:
                self._pending_lo = np.minimum(self._pending_lo, lo)
                self._pending_hi = np.maximum(self._pending_hi, hi)
        return changed

    def consume_changes(self):
        """Drain the change-tracking accumulator: ((lo, hi) index box or None, new occupied cells)."""
        box = None
        if self._pending_lo is not None:
            box = (self._pending_lo.copy(), self._pending_hi.copy())
        new_occ = self._new_occupied
        self._pending_lo = None
        self._pending_hi = None
        self._new_occupied = []
        return box, new_occ

    # ------------------------------------------------------------------ derived views

    def coarsened(self, factor: int = 2) -> "OccupancyGrid":
        """Conservative low-resolution view: a coarse cell is Free only if every
        fine cell inside it is Free; Occupied if any is Occupied; else Unknown."""
        g = OccupancyGrid(self.bounds, self.resolution * factor)
        fx, fy, fz = (int(v) for v in g.dims)
        pad = [(0, fx * factor - self.dims[0]), (0, fy * factor - self.dims[1]),
               (0, fz * factor - self.dims[2])]
        padded = np.pad(self.cells, pad, constant_values=OCCUPIED)
        blocks = padded.reshape(fx, factor, fy, factor, fz, factor)
        blocks = blocks.transpose(0, 2, 4, 1, 3, 5).reshape(fx, fy, fz, -1)
        all_free = np.all(blocks == FREE, axis=-1)
        any_occ = np.any(blocks == OCCUPIED, axis=-1)
        g.cells = np.where(any_occ, OCCUPIED, np.where(all_free, FREE, UNKNOWN)).astype(np.int8)
        return g

    def occupied_mask(self) -> np.ndarray:
        return self.cells == OCCUPIED

    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    # ------------------------------------------------------------------ snapshot IO

    def save_snapshot(self, path) -> None:
        """Text export: header `res ox oy oz nx ny nz`, then one `i j k state` line
        per non-Unknown cell."""
        with open(path, "w") as f:
            f.write(
                f"{self.resolution:.6f} {self.origin[0]:.6f} {self.origin[1]:.6f} "
                f"{self.origin[2]:.6f} {self.dims[0]} {self.dims[1]} {self.dims[2]}\n"
            )
            known = np.argwhere(self.cells != UNKNOWN)
            for i, j, k in known:
                f.write(f"{i} {j} {k} {_STATE_NAMES[int(self.cells[i, j, k])]}\n")

    @classmethod
    def load_snapshot(cls, path) -> "OccupancyGrid":
        with open(path) as f:
            header = f.readline().split()
            res = float(header[0])
            origin = np.array([float(v) for v in header[1:4]])
            dims = np.array([int(v) for v in header[4:7]])
            bounds = ExplorationBounds(origin, origin + dims * res)
            g = cls(bounds, res)
            for line in f:
                parts = line.split()
                if len(parts) != 4:
                    continue
                i, j, k = (int(v) for v in parts[:3])
                g.cells[i, j, k] = _STATE_FROM_NAME[parts[3]]
        return g
