"""Ground-truth worlds: axis-aligned boxes and vertical cylinders inside a bounds box.

Worlds are purely geometric; the depth sensor queries them through ray_depths()
so scans are exact and deterministic. Named fixtures cover the benchmark scenes
plus small crafted maps for targeted planner behavior.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .grid import ExplorationBounds


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float))

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.size / 2.0

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.size / 2.0

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo[None, :]) & (pts <= self.hi[None, :]), axis=1)


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder standing on z=z0 with height h."""

    cx: float
    cy: float
    radius: float
    height: float
    z0: float = 0.0

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        r2 = (pts[:, 0] - self.cx) ** 2 + (pts[:, 1] - self.cy) ** 2
        return (r2 <= self.radius**2) & (pts[:, 2] >= self.z0) & (pts[:, 2] <= self.z0 + self.height)


@dataclass
class TrueWorld:
    name: str
    bounds: ExplorationBounds
    obstacles: list = field(default_factory=list)
    start: np.ndarray = None
    start_yaw: float = 0.0

    def __post_init__(self):
        if self.start is None:
            self.start = self.bounds.box_min + self.bounds.extent / 2.0
        self.start = np.asarray(self.start, dtype=float)

    # ------------------------------------------------------------------ queries

    def ray_depths(self, origin, dirs: np.ndarray) -> np.ndarray:
        """Distance to the nearest obstacle surface along each unit direction.

        Returns +inf where a ray hits nothing. Origins inside an obstacle are not
        supported (the sensor never flies there); such rays would report 0.
        """
        origin = np.asarray(origin, dtype=float)
        dirs = np.atleast_2d(dirs)
        depth = np.full(dirs.shape[0], np.inf)
        for obs in self.obstacles:
            if isinstance(obs, Box):
                t = _ray_box(origin, dirs, obs.lo, obs.hi)
            else:
                t = _ray_cylinder(origin, dirs, obs)
            depth = np.minimum(depth, t)
        return depth

    def point_inside_obstacle(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        hit = np.zeros(pts.shape[0], dtype=bool)
        for obs in self.obstacles:
            hit |= obs.contains(pts)
        return hit

    def cell_overlaps_obstacle(self, resolution: float) -> np.ndarray:
        """Boolean voxelization: cells any part of which intersects an obstacle."""
        lo = self.bounds.box_min
        dims = np.ceil(self.bounds.extent / resolution - 1e-9).astype(int)
        overlap = np.zeros(tuple(dims), dtype=bool)
        axes = [lo[ax] + np.arange(dims[ax]) * resolution for ax in range(3)]
        for obs in self.obstacles:
            if isinstance(obs, Box):
                masks = [
                    (axes[ax] < obs.hi[ax] - 1e-12)
                    & (axes[ax] + resolution > obs.lo[ax] + 1e-12)
                    for ax in range(3)
                ]
                overlap |= (masks[0][:, None, None] & masks[1][None, :, None]
                            & masks[2][None, None, :])
            else:
                # Distance from the cylinder axis to each xy cell rectangle.
                cx = np.clip(obs.cx, axes[0][:, None], axes[0][:, None] + resolution)
                cy = np.clip(obs.cy, axes[1][None, :], axes[1][None, :] + resolution)
                d2 = (cx - obs.cx) ** 2 + (cy - obs.cy) ** 2
                xy = d2 < obs.radius**2 - 1e-12
                z = ((axes[2] < obs.z0 + obs.height - 1e-12)
                     & (axes[2] + resolution > obs.z0 + 1e-12))
                overlap |= xy[:, :, None] & z[None, None, :]
        return overlap

    def reachable_known_volume(self, resolution: float) -> float:
        """Flood-fill oracle for the volume a sensor can ever come to know.

        Voxelizes strictly-free space (cells not touching any obstacle),
        6-connected flood fill from the start pose, then adds the surface
        voxels adjacent to the reachable region: those become Occupied once
        observed, while fully buried cells can never be learned.
        """
        from scipy import ndimage

        free = ~self.cell_overlaps_obstacle(resolution)
        dims = np.array(free.shape)
        labels, _ = ndimage.label(free, structure=ndimage.generate_binary_structure(3, 1))
        start_idx = np.minimum(
            np.floor((self.start - self.bounds.box_min) / resolution).astype(int),
            dims - 1,
        )
        start_label = labels[tuple(start_idx)]
        if start_label == 0:
            return 0.0
        reach = labels == start_label
        knowable = ndimage.binary_dilation(
            reach, structure=ndimage.generate_binary_structure(3, 1)
        )
        return float(np.count_nonzero(knowable)) * resolution**3


def _ray_box(origin, dirs, lo, hi) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, :] - origin[None, :]) / dirs
        t2 = (hi[None, :] - origin[None, :]) / dirs
    t_near_ax = np.minimum(t1, t2)
    t_far_ax = np.maximum(t1, t2)
    # Rays parallel to an axis miss unless the origin is inside that slab.
    inside = (origin[None, :] >= lo[None, :]) & (origin[None, :] <= hi[None, :])
    t_near_ax = np.where(np.isnan(t_near_ax), np.where(inside, -np.inf, np.inf), t_near_ax)
    t_far_ax = np.where(np.isnan(t_far_ax), np.where(inside, np.inf, -np.inf), t_far_ax)
    t_near = t_near_ax.max(axis=1)
    t_far = t_far_ax.min(axis=1)
    hit = (t_near <= t_far) & (t_far > 0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


def _ray_cylinder(origin, dirs, cyl: Cylinder) -> np.ndarray:
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    fx, fy = ox - cyl.cx, oy - cyl.cy
    z_lo, z_hi = cyl.z0, cyl.z0 + cyl.height

    with np.errstate(divide="ignore", invalid="ignore"):
        # Side surface: quadratic in the xy-plane.
        a = dx * dx + dy * dy
        b = 2.0 * (fx * dx + fy * dy)
        c = fx * fx + fy * fy - cyl.radius**2
        disc = b * b - 4 * a * c
        valid = (disc >= 0) & (a > 1e-12)
        sq = np.sqrt(np.where(valid, disc, 0.0))
        for sign in (-1.0, 1.0):
            t = np.where(valid, (-b + sign * sq) / np.where(a > 1e-12, 2 * a, 1.0), np.inf)
            z = np.where(np.isfinite(t), oz + t * dz, np.inf)
            ok = valid & (t > 0) & (z >= z_lo) & (z <= z_hi)
            best = np.where(ok & (t < best), t, best)

        # End caps.
        for z_cap in (z_lo, z_hi):
            t = (z_cap - oz) / dz
            finite = np.isfinite(t) & (t > 0)
            x = np.where(finite, ox + t * dx - cyl.cx, np.inf)
            y = np.where(finite, oy + t * dy - cyl.cy, np.inf)
            ok = finite & (x * x + y * y <= cyl.radius**2)
            best = np.where(ok & (t < best), t, best)
    return best


# ---------------------------------------------------------------------- fixtures

WALL = 0.2  # default wall thickness, m


def _walled_bounds(bx, by, bz, wall=WALL):
    """Perimeter walls for an indoor scene of interior extent bx x by x bz."""
    return [
        Box((bx / 2, wall / 2, bz / 2), (bx, wall, bz)),
        Box((bx / 2, by - wall / 2, bz / 2), (bx, wall, bz)),
        Box((wall / 2, by / 2, bz / 2), (wall, by, bz)),
        Box((bx - wall / 2, by / 2, bz / 2), (wall, by, bz)),
    ]


def _office() -> TrueWorld:
    bx, by, bz = 30.0, 16.0, 2.0
    obstacles = _walled_bounds(bx, by, bz)
    # Two interior partition walls with door openings, plus furniture blocks.
    # Wall at x=10: door at y in [4.0, 5.6].
    obstacles.append(Box((10.0, 2.0, bz / 2), (WALL, 4.0, bz)))
    obstacles.append(Box((10.0, 10.8, bz / 2), (WALL, 10.4, bz)))
    # Wall at x=20: door at y in [10.4, 12.0].
    obstacles.append(Box((20.0, 5.2, bz / 2), (WALL, 10.4, bz)))
    obstacles.append(Box((20.0, 14.0, bz / 2), (WALL, 4.0, bz)))
    # Cross wall in the middle room at y=8: opening at x in [13.0, 14.6].
    obstacles.append(Box((11.5, 8.0, bz / 2), (3.0, WALL, bz)))
    obstacles.append(Box((17.3, 8.0, bz / 2), (5.4, WALL, bz)))
    # Furniture: desks and cabinets.
    obstacles.append(Box((5.0, 12.0, 0.5), (2.4, 1.2, 1.0)))
    obstacles.append(Box((4.0, 5.0, 0.5), (1.2, 2.4, 1.0)))
    obstacles.append(Box((15.0, 3.5, 0.5), (2.0, 1.0, 1.0)))
    obstacles.append(Box((25.0, 4.0, 0.5), (1.5, 1.5, 1.0)))
    obstacles.append(Box((26.0, 12.5, 0.5), (2.0, 1.2, 1.0)))
    bounds = ExplorationBounds((0, 0, 0), (bx, by, bz))
    return TrueWorld("office", bounds, obstacles, start=(2.0, 2.0, 1.0), start_yaw=0.0)


def _outdoor() -> TrueWorld:
    bx, by, bz = 20.0, 30.0, 3.0
    obstacles = []
    # Tree trunks: deterministic scatter.
    trees = [
        (3.5, 4.0, 0.35), (8.0, 6.5, 0.45), (15.5, 5.0, 0.35), (5.0, 11.0, 0.40),
        (12.5, 12.5, 0.50), (17.0, 10.5, 0.35), (3.0, 18.0, 0.45), (9.5, 17.5, 0.35),
        (16.0, 19.0, 0.40), (6.0, 24.0, 0.35), (13.0, 25.5, 0.45), (18.0, 26.0, 0.35),
    ]
    for cx, cy, r in trees:
        obstacles.append(Cylinder(cx, cy, r, bz))
    # Parked cars.
    obstacles.append(Box((10.0, 2.5, 0.75), (1.8, 4.0, 1.5)))
    obstacles.append(Box((4.5, 27.5, 0.75), (4.0, 1.8, 1.5)))
    # Corridor colonnade.
    for cy in (9.0, 13.0, 17.0, 21.0):
        obstacles.append(Box((19.0, cy, bz / 2), (0.6, 0.6, bz)))
    # Fence segment with a gap.
    obstacles.append(Box((7.0, 14.8, 0.6), (6.0, 0.2, 1.2)))
    bounds = ExplorationBounds((0, 0, 0), (bx, by, bz))
    return TrueWorld("outdoor", bounds, obstacles, start=(2.0, 2.0, 1.2), start_yaw=1.0)


def _pocket() -> TrueWorld:
    """One dead-end pocket of depth 1.0 m plus an open area, for pocket-depth tests."""
    bx, by, bz = 14.0, 8.0, 2.0
    obstacles = _walled_bounds(bx, by, bz)
    # U-shaped dead end on the left side: mouth faces +x, inner depth exactly 1.0 m.
    # Back wall inner face at x=2.0, side walls at y=3.0 and y=5.0 (mouth 2.0 m wide).
    obstacles.append(Box((1.9, 4.0, bz / 2), (0.2, 2.2, bz)))      # back wall
    obstacles.append(Box((2.5, 2.9, bz / 2), (1.0, 0.2, bz)))      # lower lip
    obstacles.append(Box((2.5, 5.1, bz / 2), (1.0, 0.2, bz)))      # upper lip
    bounds = ExplorationBounds((0, 0, 0), (bx, by, bz))
    return TrueWorld("pocket", bounds, obstacles, start=(7.0, 4.0, 1.0), start_yaw=3.14)


def _room_exit() -> TrueWorld:
    """A start room with a single door; the interesting paths lead outside it."""
    bx, by, bz = 16.0, 10.0, 2.0
    obstacles = _walled_bounds(bx, by, bz)
    # Room around the start: x in [1,6], y in [3,8]; door on the right wall,
    # opening at y in [4.6, 6.0].
    obstacles.append(Box((3.5, 3.0, bz / 2), (5.0, 0.2, bz)))
    obstacles.append(Box((3.5, 8.0, bz / 2), (5.0, 0.2, bz)))
    obstacles.append(Box((1.0, 5.5, bz / 2), (0.2, 5.2, bz)))
    obstacles.append(Box((6.0, 3.75, bz / 2), (0.2, 1.7, bz)))
    obstacles.append(Box((6.0, 7.1, bz / 2), (0.2, 2.0, bz)))
    bounds = ExplorationBounds((0, 0, 0), (bx, by, bz))
    return TrueWorld("room_exit", bounds, obstacles, start=(3.0, 5.5, 1.0), start_yaw=0.0)


def _empty() -> TrueWorld:
    bounds = ExplorationBounds((0, 0, 0), (6.0, 4.0, 2.0))
    return TrueWorld("empty", bounds, [], start=(3.0, 2.0, 1.0), start_yaw=0.0)


_FIXTURES = {
    "office": _office,
    "outdoor": _outdoor,
    "pocket": _pocket,
    "room_exit": _room_exit,
    "empty": _empty,
}


def make_world(name: str) -> TrueWorld:
    """Build a named procedural fixture."""
    if name not in _FIXTURES:
        raise ValueError(
            f"unknown world '{name}'; available fixtures: {', '.join(sorted(_FIXTURES))}"
        )
    return _FIXTURES[name]()


def load_world_file(path) -> TrueWorld:
    """Parse a world override file.

    Lines: `box cx cy cz sx sy sz`, `cyl cx cy r h`, optional `bounds bx by bz`
    and `start x y z yaw`. Without a bounds line the box fits the obstacles with
    a 1 m margin.
    """
    obstacles = []
    bounds = None
    start = None
    start_yaw = 0.0
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            kind, vals = parts[0], [float(v) for v in parts[1:]]
            if kind == "box" and len(vals) == 6:
                obstacles.append(Box(vals[:3], vals[3:]))
            elif kind == "cyl" and len(vals) == 4:
                obstacles.append(Cylinder(vals[0], vals[1], vals[2], vals[3]))
            elif kind == "bounds" and len(vals) == 3:
                bounds = ExplorationBounds((0, 0, 0), vals)
            elif kind == "start" and len(vals) == 4:
                start = np.array(vals[:3])
                start_yaw = vals[3]
            else:
                raise ValueError(f"{path}:{ln}: unrecognized world line: {line.strip()!r}")
    if bounds is None:
        if not obstacles:
            raise ValueError(f"{path}: world file needs obstacles or a bounds line")
        los = np.array([o.lo if isinstance(o, Box) else
                        [o.cx - o.radius, o.cy - o.radius, o.z0] for o in obstacles])
        his = np.array([o.hi if isinstance(o, Box) else
                        [o.cx + o.radius, o.cy + o.radius, o.z0 + o.height] for o in obstacles])
        bounds = ExplorationBounds(los.min(axis=0) - 1.0, his.max(axis=0) + 1.0)
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return TrueWorld(name, bounds, obstacles, start=start, start_yaw=start_yaw)
