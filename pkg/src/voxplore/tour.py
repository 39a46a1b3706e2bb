"""Frontier tour planning: asymmetric cost matrix and its open-tour solver.

The first matrix row prices each cluster from the drone's predicted state with
flight-level terms (path-time lower bound, velocity direction change) plus two
frontier-level terms: closeness of the cluster to the exploration boundary and
the depth of unknown space behind it (a short probe ray means a shallow pocket,
which is cheap to finish now and expensive to revisit later). The inner block
is the symmetric pairwise time lower bound, and the return column is zero so a
cycle solver yields an open tour.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as sparse_dijkstra

from .angles import wrapped_abs_diff
from .frontiers import FrontierCluster, Viewpoint
from .grid import FREE, OCCUPIED, UNKNOWN, ExplorationBounds, OccupancyGrid
from .paths import NoPathError, astar_geometric
from .types import DroneState, DynamicLimits

log = logging.getLogger(__name__)


@dataclass
class TourConfig:
    w_c: float = 1.5
    w_b: float = 0.3
    w_f: float = 0.3
    h_max: float = 4.5
    d_thr: float = 10.0
    b_min: tuple = (15.0, 15.0, 10.0)
    edge_priority: bool = True
    bottom_ray: bool = True

    def __post_init__(self):
        if min(self.w_c, self.w_b, self.w_f) < 0:
            raise ValueError("tour weights must be non-negative")
        if self.h_max <= 0 or self.d_thr <= 0:
            raise ValueError("h_max and d_thr must be positive")
        if min(self.b_min) <= 0:
            raise ValueError("b_min components must be positive")


@dataclass
class TourCostMatrix:
    """(n+1)^2 cost matrix; row/column 0 is the drone's current state."""

    entries: np.ndarray
    cluster_ids: list
    dropped_ids: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.cluster_ids)

    def dump(self, path) -> None:
        with open(path, "w") as f:
            f.write(f"{self.n}\n")
            for row in self.entries:
                f.write(" ".join(f"{v:.6f}" for v in row) + "\n")


# ---------------------------------------------------------------------- cost terms


def edge_priority_distance(cluster: FrontierCluster, bounds: ExplorationBounds,
                           b_min=(15.0, 15.0, 10.0)) -> float:
    """Distance from the cluster average to the nearest exploration-bounds face,
    over axes whose extent is at least b_min; 0 when every axis is removed."""
    avg = cluster.average
    extent = bounds.extent
    candidates = []
    for ax in range(3):
        if extent[ax] >= b_min[ax]:
            candidates.append(min(avg[ax] - bounds.box_min[ax],
                                  bounds.box_max[ax] - avg[ax]))
    return float(min(candidates)) if candidates else 0.0


def pocket_depth(viewpoint: Viewpoint, cluster: FrontierCluster, grid: OccupancyGrid,
                 cfg: TourConfig) -> float:
    """Probe-ray depth of the unknown region behind the cluster.

    Extends the viewpoint-to-average ray beyond the average point one voxel at a
    time while cells stay Unknown; stops on a Free or Occupied voxel, the bounds,
    or after h_max. Returns the distance from the average to the stop point.
    """
    avg = cluster.average
    direction = avg - viewpoint.position
    norm = float(np.linalg.norm(direction))
    if norm < 1e-9:
        return cfg.h_max
    direction = direction / norm
    step = grid.resolution
    max_steps = int(math.floor(cfg.h_max / step + 1e-9))
    for i in range(1, max_steps + 1):
        q = avg + i * step * direction
        state = grid.classify(q)
        if state == -1:  # left the bounds: stop at the last in-bounds sample
            return max((i - 1) * step, 0.0)
        if state != UNKNOWN:
            return min(i * step, cfg.h_max)
    return cfg.h_max


def velocity_change_cost(viewpoint: Viewpoint, state: DroneState) -> float:
    """Angle between the current velocity and the direction to the viewpoint;
    0 when hovering (direction change costs nothing from standstill)."""
    v = state.velocity
    speed = float(np.linalg.norm(v))
    if speed < 0.01:
        return 0.0
    rel = viewpoint.position - state.position
    dist = float(np.linalg.norm(rel))
    if dist < 1e-9:
        return 0.0
    cosang = float(np.dot(rel, v)) / (dist * speed)
    return math.acos(min(1.0, max(-1.0, cosang)))


def motion_lower_bound(from_pos, from_yaw: float, to_vp: Viewpoint,
                       grid: OccupancyGrid, limits: DynamicLimits,
                       length_fn=None) -> float:
    """Time lower bound between two poses: max of path-length/v_max and wrapped
    yaw change over the rate limit. Infinite when no path exists."""
    a = np.asarray(from_pos, dtype=float)
    b = to_vp.position
    if length_fn is not None:
        length = length_fn(a, b)
    else:
        length = exact_path_length(a, b, grid)
    if math.isinf(length):
        return math.inf
    t_pos = length / limits.v_max
    t_yaw = wrapped_abs_diff(from_yaw, to_vp.yaw) / limits.yaw_rate_max
    return max(t_pos, t_yaw)


def exact_path_length(a, b, grid: OccupancyGrid) -> float:
    """Collision-free geometric path length: straight when intervisible through
    Free cells, otherwise the geometric A* polyline (with exact endpoints)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    euclid = float(np.linalg.norm(b - a))
    if euclid < 1e-12:
        return 0.0
    if _free_line(grid, a, b):
        return euclid
    try:
        pts = astar_geometric(a, b, grid)
    except NoPathError:
        return math.inf
    pts = pts.copy()
    pts[0] = a
    pts[-1] = b
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _free_line(grid, a, b) -> bool:
    for c in grid.raycast(a, b):
        if grid.cells[c] != FREE:
            return False
    return True


# ---------------------------------------------------------------------- estimator

_HALF_OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) > (0, 0, 0)
]


class TourDistanceEstimator:
    """Fast path-length estimates for cost matrices.

    Reachability comes from exact 26-connected components of the fine grid.
    Lengths use straight-line distance for intervisible pairs and otherwise a
    Dijkstra wavefront on a conservative half-resolution grid, cached per
    source token (a cluster keeps its wavefront until its viewpoints change).
    """

    WAVE_CACHE_CAP = 256

    def __init__(self, coarse_factor: int = 2):
        self.factor = coarse_factor
        self._waves: dict = {}          # coarse source cell -> distance field
        self._wave_order: list = []
        self._pair_cache: dict = {}
        self.grid = None

    def update(self, grid: OccupancyGrid) -> None:
        self.grid = grid
        self.labels, _ = ndimage.label(grid.free_mask(),
                                       structure=np.ones((3, 3, 3), dtype=bool))
        self.coarse = grid.coarsened(self.factor)
        self._cfree = self.coarse.free_mask()
        self._graph = None

    def forget(self, token) -> None:
        self._waves.pop(token, None)

    def reachable(self, a, b) -> bool:
        la = self._fine_label(a)
        return la > 0 and la == self._fine_label(b)

    def pair_length(self, tok_a, pos_a, tok_b, pos_b) -> float:
        """length() memoized by the (cluster token, cluster token) pair."""
        key = (tok_a, tok_b) if tok_a <= tok_b else (tok_b, tok_a)
        hit = self._pair_cache.get(key)
        if hit is None:
            hit = self.length(pos_a, pos_b, token=tok_b)
            self._pair_cache[key] = hit
        return hit

    def length(self, a, b, token=None) -> float:
        """Path length between points; `token` keys the cached wavefront whose
        source is b."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        euclid = float(np.linalg.norm(b - a))
        if euclid < 1e-12:
            return 0.0
        if self.grid.line_of_sight(a, b, step_scale=0.5):
            return euclid
        wave = self._wave_for(token, b)
        if wave is None:
            return euclid * 1.5
        ca = self._snap_coarse(a)
        if ca is None:
            return euclid * 1.5
        d = float(wave[ca])
        if not math.isfinite(d):
            return euclid * 1.5
        d += float(np.linalg.norm(a - self.coarse.cell_center(ca)))
        return max(d, euclid)

    def _fine_label(self, p) -> int:
        idx = self.grid.world_to_index(p)
        if not self.grid.index_in_grid(idx):
            return 0
        i, j, k = idx
        if self.labels[i, j, k] > 0:
            return int(self.labels[i, j, k])
        for r in (1, 2):
            lo = np.maximum(idx - r, 0)
            hi = np.minimum(idx + r + 1, self.grid.dims)
            block = self.labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
            nz = block[block > 0]
            if nz.size:
                return int(nz.min())
        return 0

    def _snap_coarse(self, p):
        idx = self.coarse.world_to_index(p)
        if self.coarse.index_in_grid(idx) and self._cfree[tuple(idx)]:
            return tuple(int(v) for v in idx)
        best = None
        for r in (1, 2):
            lo = np.maximum(idx - r, 0)
            hi = np.minimum(idx + r + 1, self.coarse.dims)
            block = self._cfree[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
            cand = np.argwhere(block)
            if cand.size:
                cand = cand + lo[None, :]
                d2 = np.sum((cand - idx[None, :]) ** 2, axis=1)
                order = np.lexsort((cand[:, 2], cand[:, 1], cand[:, 0], d2))
                best = tuple(int(v) for v in cand[order[0]])
                break
        return best

    def _wave_for(self, token, src_point):
        # Keyed by the snapped coarse source cell: clusters that dissolve and
        # re-form in place keep hitting the same cached field.
        src = self._snap_coarse(src_point)
        if src is None:
            return None
        if src in self._waves:
            return self._waves[src]
        self._ensure_graph()
        flat = np.ravel_multi_index(src, tuple(self.coarse.dims))
        wave = sparse_dijkstra(self._graph, directed=False,
                               indices=flat).reshape(tuple(self.coarse.dims)).astype(np.float32)
        self._waves[src] = wave
        self._wave_order.append(src)
        if len(self._wave_order) > self.WAVE_CACHE_CAP:
            old_key = self._wave_order.pop(0)
            self._waves.pop(old_key, None)
        return wave

    def _ensure_graph(self):
        if self._graph is not None:
            return
        dims = tuple(int(v) for v in self.coarse.dims)
        n = dims[0] * dims[1] * dims[2]
        idx3 = np.arange(n).reshape(dims)
        free = self._cfree
        rows, cols, vals = [], [], []
        res = self.coarse.resolution
        for dx, dy, dz in _HALF_OFFSETS:
            src = idx3[max(0, -dx):dims[0] - max(0, dx),
                       max(0, -dy):dims[1] - max(0, dy),
                       max(0, -dz):dims[2] - max(0, dz)]
            dst = idx3[max(0, dx):dims[0] - max(0, -dx),
                       max(0, dy):dims[1] - max(0, -dy),
                       max(0, dz):dims[2] - max(0, -dz)]
            ok = (free[max(0, -dx):dims[0] - max(0, dx),
                       max(0, -dy):dims[1] - max(0, dy),
                       max(0, -dz):dims[2] - max(0, dz)]
                  & free[max(0, dx):dims[0] - max(0, -dx),
                         max(0, dy):dims[1] - max(0, -dy),
                         max(0, dz):dims[2] - max(0, -dz)])
            rows.append(src[ok])
            cols.append(dst[ok])
            w = res * math.sqrt(dx * dx + dy * dy + dz * dz)
            vals.append(np.full(int(ok.sum()), w))
        self._graph = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()


# ---------------------------------------------------------------------- matrix


def build_cost_matrix(state: DroneState, clusters: list, grid: OccupancyGrid,
                      cfg: TourConfig, limits: DynamicLimits,
                      estimator: TourDistanceEstimator | None = None) -> TourCostMatrix:
    """Assemble the tour cost matrix over each cluster's best viewpoint.

    Row 0 adds the frontier-level terms, clamped below at zero; the inner block
    is the symmetric pairwise time lower bound; column 0 is identically zero.
    Unreachable clusters are dropped with a warning.
    """
    usable = []
    for c in clusters:
        vp = c.best_viewpoint
        if estimator is not None:
            ok = estimator.reachable(state.position, vp.position)
        else:
            ok = math.isfinite(exact_path_length(state.position, vp.position, grid))
        if ok:
            usable.append(c)
        else:
            log.warning("cluster %d unreachable from current state; dropped", c.id)
    usable_ids = {c.id for c in usable}
    dropped = [c.id for c in clusters if c.id not in usable_ids]

    n = len(usable)
    m = np.zeros((n + 1, n + 1))
    for ki, c in enumerate(usable, start=1):
        vp = c.best_viewpoint
        if estimator is not None:
            fn = lambda a, b, tok=(c.id, c.viewpoint_version): estimator.length(a, b, tok)
        else:
            fn = lambda a, b: exact_path_length(a, b, grid)
        t_lb = motion_lower_bound(state.position, state.yaw, vp, grid, limits,
                                  length_fn=fn)
        c_c = velocity_change_cost(vp, state)
        d_min = (edge_priority_distance(c, grid.bounds, cfg.b_min)
                 if cfg.edge_priority else 0.0)
        if not cfg.bottom_ray:
            h_k = cfg.h_max
        elif float(np.linalg.norm(vp.position - state.position)) < cfg.d_thr:
            h_k = pocket_depth(vp, c, grid, cfg)
        else:
            h_k = cfg.h_max
        cost = t_lb + cfg.w_c * c_c + cfg.w_b * d_min - cfg.w_f * (cfg.h_max - h_k)
        m[0, ki] = max(cost, 0.0)

    for i in range(1, n + 1):
        ci = usable[i - 1]
        vi = ci.best_viewpoint
        for j in range(i + 1, n + 1):
            cj = usable[j - 1]
            vj = cj.best_viewpoint
            if estimator is not None:
                tok_i = (ci.id, ci.viewpoint_version)
                tok_j = (cj.id, cj.viewpoint_version)
                fn = lambda a, b: estimator.pair_length(tok_i, a, tok_j, b)
            else:
                fn = lambda a, b: exact_path_length(a, b, grid)
            t = motion_lower_bound(vi.position, vi.yaw, vj, grid, limits, length_fn=fn)
            m[i, j] = m[j, i] = t if math.isfinite(t) else 1e9
    return TourCostMatrix(m, [c.id for c in usable], dropped)


# ---------------------------------------------------------------------- ATSP


def solve_atsp(matrix: TourCostMatrix | np.ndarray) -> list:
    """Open tour from node 0 over all clusters: greedy constructions improved by
    2-opt and segment-relocation moves until no gain. Deterministic.

    Returns the visiting order as matrix node indices (1-based, excluding 0).
    """
    m = matrix.entries if isinstance(matrix, TourCostMatrix) else np.asarray(matrix)
    n = m.shape[0] - 1
    if n <= 0:
        return []
    if n == 1:
        return [1]

    candidates = [_nearest_neighbor(m, n), _cheapest_insertion(m, n)]
    best = min(candidates, key=lambda t: (_tour_cost(m, t), t))
    best = _local_search(m, best)
    return best


def _tour_cost(m, tour) -> float:
    cost = m[0, tour[0]]
    for a, b in zip(tour[:-1], tour[1:]):
        cost += m[a, b]
    return float(cost)  # return-to-depot column is zero


def _nearest_neighbor(m, n):
    unvisited = list(range(1, n + 1))
    tour = []
    cur = 0
    while unvisited:
        nxt = min(unvisited, key=lambda j: (m[cur, j], j))
        tour.append(nxt)
        unvisited.remove(nxt)
        cur = nxt
    return tour


def _cheapest_insertion(m, n):
    remaining = list(range(2, n + 1))
    tour = [1]

    def edge(a, b):
        return 0.0 if b == 0 else float(m[a, b])

    while remaining:
        best = None
        for node in remaining:
            for pos in range(len(tour) + 1):
                a = tour[pos - 1] if pos > 0 else 0
                b = tour[pos] if pos < len(tour) else 0
                delta = edge(a, node) + edge(node, b) - edge(a, b)
                key = (delta, node, pos)
                if best is None or key < best[0]:
                    best = (key, node, pos)
        _, node, pos = best
        tour.insert(pos, node)
        remaining.remove(node)
    return tour


def _local_search(m, tour):
    """First-improvement 2-opt and segment relocation with O(1) move deltas.

    The 2-opt delta relies on the inner block being symmetric (reversing a
    segment leaves its internal cost unchanged); relocation deltas are valid
    for any asymmetric matrix. Column 0 is the zero return-to-depot edge.
    """
    tour = list(tour)
    n = len(tour)
    sym = bool(np.allclose(m[1:, 1:], m[1:, 1:].T, atol=1e-9))

    def edge(a, b):
        return 0.0 if b == 0 else float(m[a, b])

    improved = True
    while improved:
        improved = False
        if sym:
            for i in range(n - 1):
                for j in range(i + 2, n + 1):
                    pred = tour[i - 1] if i > 0 else 0
                    succ = tour[j] if j < n else 0
                    head, tail = tour[i], tour[j - 1]
                    delta = (edge(pred, tail) + edge(head, succ)
                             - edge(pred, head) - edge(tail, succ))
                    if delta < -1e-12:
                        tour[i:j] = tour[i:j][::-1]
                        improved = True
        # Segment relocation (lengths 1..3), orientation preserved.
        for seg in (1, 2, 3):
            for i in range(0, n - seg + 1):
                s0 = tour[i]
                s1 = tour[i + seg - 1]
                p = tour[i - 1] if i > 0 else 0
                q = tour[i + seg] if i + seg < n else 0
                gain_rm = edge(p, q) - edge(p, s0) - edge(s1, q)
                rest = tour[:i] + tour[i + seg:]
                piece = tour[i:i + seg]
                moved = False
                for pos in range(len(rest) + 1):
                    if pos == i:
                        continue
                    a = rest[pos - 1] if pos > 0 else 0
                    b = rest[pos] if pos < len(rest) else 0
                    delta = gain_rm + edge(a, s0) + edge(s1, b) - edge(a, b)
                    if delta < -1e-12:
                        tour = rest[:pos] + piece + rest[pos:]
                        improved = True
                        moved = True
                        break
                if moved:
                    continue
    return tour
