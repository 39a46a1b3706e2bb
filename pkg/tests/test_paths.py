import heapq
import itertools
import math

import numpy as np
import pytest

from voxplore.grid import FREE, OCCUPIED, UNKNOWN, ExplorationBounds, OccupancyGrid
from voxplore.paths import (
    GuidePath,
    NoPathError,
    SearchFailedError,
    SmoothDistanceField,
    astar_geometric,
    closed_form,
    guided_search,
    plan_position,
    position_cost_and_grad,
    prune_path,
    refine_trajectory,
    select_duration,
    use_closed_form,
    _basis_matrix,
)
from voxplore.types import DroneState, DynamicLimits
from voxplore.world import make_world
from voxplore.grid import SensorPose

LIMITS = DynamicLimits(v_max=2.0, a_max=1.0, yaw_rate_max=1.0)


def free_grid(extent, res=0.15):
    g = OccupancyGrid(ExplorationBounds((0, 0, 0), extent), res)
    g.cells[:] = FREE
    return g


def dijkstra_oracle(grid, start, goal):
    """Independent shortest-path length on the same move set (no heuristic)."""
    s = tuple(int(v) for v in grid.world_to_index(start))
    g = tuple(int(v) for v in grid.world_to_index(goal))
    moves = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        if d == (0, 0, 0):
            continue
        gates = []
        nz = [ax for ax in range(3) if d[ax] != 0]
        if len(nz) > 1:
            for ax in nz:
                gate = [0, 0, 0]
                gate[ax] = d[ax]
                gates.append(tuple(gate))
        moves.append((d, math.sqrt(sum(x * x for x in d)) * grid.resolution, gates))
    dist = {s: 0.0}
    heap = [(0.0, s)]
    done = set()
    while heap:
        dc, cur = heapq.heappop(heap)
        if cur in done:
            continue
        if cur == g:
            return dc
        done.add(cur)
        for d, cost, gates in moves:
            n = (cur[0] + d[0], cur[1] + d[1], cur[2] + d[2])
            if not grid.index_in_grid(n) or grid.cells[n] != FREE:
                continue
            if any(grid.cells[cur[0] + gt[0], cur[1] + gt[1], cur[2] + gt[2]] != FREE
                   for gt in gates):
                continue
            nd = dc + cost
            if nd < dist.get(n, math.inf):
                dist[n] = nd
                heapq.heappush(heap, (nd, n))
    return math.inf


def path_length(points):
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


class TestAstar:
    def test_adjacent_cells(self):
        g = free_grid((2, 2, 2))
        p = astar_geometric((0.1, 0.1, 0.1), (0.25, 0.1, 0.1), g)
        assert len(p) == 2

    def test_empty_grid_matches_dijkstra(self):
        g = free_grid((3.0, 3.0, 1.0), res=0.15)
        start, goal = (0.1, 0.1, 0.5), (2.9, 2.9, 0.5)
        p = astar_geometric(start, goal, g)
        assert path_length(p) == pytest.approx(dijkstra_oracle(g, start, goal), abs=1e-9)

    def test_random_maps_match_dijkstra(self):
        rng = np.random.default_rng(31)
        for _ in range(12):
            g = free_grid((2.4, 2.4, 1.2), res=0.15)  # 16x16x8 <= 32^3
            blocks = rng.random(tuple(g.dims)) < 0.2
            g.cells[blocks] = OCCUPIED
            g.cells[0, 0, 0] = FREE
            g.cells[-1, -1, -1] = FREE
            start = g.cell_center((0, 0, 0))
            goal = g.cell_center(tuple(g.dims - 1))
            oracle = dijkstra_oracle(g, start, goal)
            if math.isinf(oracle):
                with pytest.raises(NoPathError):
                    astar_geometric(start, goal, g)
            else:
                p = astar_geometric(start, goal, g)
                assert path_length(p) == pytest.approx(oracle, abs=1e-9)

    def test_sealed_goal_raises(self):
        g = free_grid((3, 3, 1))
        goal_idx = g.world_to_index((2.5, 2.5, 0.5))
        i, j, k = goal_idx
        g.cells[i - 1:i + 2, j - 1:j + 2, :] = OCCUPIED
        g.cells[i, j, k] = FREE
        with pytest.raises(NoPathError):
            astar_geometric((0.5, 0.5, 0.5), g.cell_center(goal_idx), g)


class TestPrune:
    def test_straight_corridor_two_waypoints(self):
        g = free_grid((5, 1, 1))
        raw = astar_geometric((0.2, 0.5, 0.5), (4.8, 0.5, 0.5), g)
        gp = prune_path(raw, g)
        assert len(gp.waypoints) == 2
        assert gp.inflection_count == 0

    def test_l_corner(self):
        g = free_grid((4, 4, 1))
        # Block everything except an L-shaped corridor.
        g.cells[:] = OCCUPIED
        g.cells[:, 0:3, 0:6] = FREE          # along x at low y
        g.cells[-3:, :, 0:6] = FREE          # along y at high x
        raw = astar_geometric((0.2, 0.2, 0.4), (3.8, 3.8, 0.4), g)
        gp = prune_path(raw, g)
        assert gp.inflection_count == 1
        assert len(gp.waypoints) == 3

    def test_pruned_segments_pass_visibility_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            g = free_grid((3.0, 3.0, 0.6), res=0.15)
            blocks = rng.random(tuple(g.dims)) < 0.15
            g.cells[blocks] = OCCUPIED
            g.cells[0, 0, :] = FREE
            g.cells[-1, -1, :] = FREE
            start = g.cell_center((0, 0, 1))
            goal = g.cell_center((g.dims[0] - 1, g.dims[1] - 1, 1))
            try:
                raw = astar_geometric(start, goal, g)
            except NoPathError:
                continue
            gp = prune_path(raw, g)
            assert path_length(gp.waypoints) <= path_length(raw) + 1e-9
            for a, b in zip(gp.waypoints[:-1], gp.waypoints[1:]):
                for c in g.raycast(a, b):
                    assert g.cells[c] == FREE


class TestUseClosedForm:
    def test_distance_branch(self):
        gp = GuidePath(np.array([[0, 0, 0], [2.0, 0, 0]]), 5, 2.0)
        assert use_closed_form(gp)

    def test_inflection_branch(self):
        gp = GuidePath(np.array([[0, 0, 0], [10.0, 0, 0]]), 1, 10.0)
        assert use_closed_form(gp)

    def test_neither(self):
        gp = GuidePath(np.array([[0, 0, 0], [10.0, 0, 0]]), 3, 10.0)
        assert not use_closed_form(gp)


class TestClosedForm:
    def test_hand_evaluated_unit_case(self):
        traj = closed_form((0, 0, 0), (0, 0, 0), (1, 0, 0), (0, 0, 0), 1.0)
        assert traj.alpha[0] == pytest.approx(-12.0, abs=1e-12)
        assert traj.beta[0] == pytest.approx(6.0, abs=1e-12)
        # p(t) = -2 t^3 + 3 t^2
        assert traj.position(0.5)[0] == pytest.approx(0.5)
        assert traj.position(1.0)[0] == pytest.approx(1.0, abs=1e-12)
        speeds = [traj.velocity(t)[0] for t in np.linspace(0, 1, 101)]
        assert max(speeds) == pytest.approx(1.5, abs=1e-9)

    def test_identity_case(self):
        traj = closed_form((1, 2, 3), (0, 0, 0), (1, 2, 3), (0, 0, 0), 2.0)
        assert np.allclose(traj.alpha, 0) and np.allclose(traj.beta, 0)
        assert traj.effort() == pytest.approx(0.0, abs=1e-15)

    def test_boundary_identity_random(self):
        rng = np.random.default_rng(53)
        for _ in range(1000):
            p0 = rng.uniform(-5, 5, 3)
            v0 = rng.uniform(-2, 2, 3)
            pn = rng.uniform(-5, 5, 3)
            vn = rng.uniform(-2, 2, 3)
            T = rng.uniform(0.2, 8.0)
            traj = closed_form(p0, v0, pn, vn, T)
            assert np.allclose(traj.position(0.0), p0, atol=1e-9)
            assert np.allclose(traj.velocity(0.0), v0, atol=1e-9)
            assert np.allclose(traj.position(T), pn, atol=1e-9)
            assert np.allclose(traj.velocity(T), vn, atol=1e-9)
            assert traj.effort() >= -1e-12

    def test_select_duration_respects_speed_limit(self):
        traj = select_duration((0, 0, 0), (0, 0, 0), (6, 0, 0), (0, 0, 0), v_max=2.0)
        ts = np.linspace(0, traj.duration, 300)
        assert np.linalg.norm(traj.velocity(ts), axis=1).max() <= 2.0 + 1e-6

    def test_select_duration_floor(self):
        traj = select_duration((0, 0, 0), (0, 0, 0), (1, 0, 0), (0, 0, 0),
                               v_max=2.0, t_floor=4.084)
        assert traj.duration >= 4.084


class TestGuidedSearch:
    def test_goal_equals_start(self):
        g = free_grid((4, 4, 2))
        gp = GuidePath(np.array([[2.0, 2.0, 1.0], [2.0, 2.0, 1.0]]), 0, 0.0)
        state = DroneState(np.array([2.0, 2.0, 1.0]))
        chain = guided_search(state, (2.0, 2.0, 1.0), gp, g, LIMITS)
        assert chain.nodes == []
        assert chain.duration == 0.0

    def test_straight_corridor_time_near_closed_form(self):
        g = free_grid((8, 2, 2))
        start = np.array([0.5, 1.0, 1.0])
        goal = np.array([6.5, 1.0, 1.0])
        gp = GuidePath(np.array([start, goal]), 0, 6.0)
        chain = guided_search(DroneState(start), goal, gp, g, LIMITS)
        cf = select_duration(start, (0, 0, 0), goal, (0, 0, 0), LIMITS.v_max)
        assert abs(chain.duration - cf.duration) <= 0.2 * cf.duration

    def test_chain_is_collision_free(self):
        world = make_world("room_exit")
        g = OccupancyGrid(world.bounds, 0.15)
        for pos, yaw in [((3.0, 5.5, 1.0), 0.0), ((5.0, 5.3, 1.0), 0.0),
                         ((8.0, 5.3, 1.0), 0.6), ((8.0, 5.3, 1.0), -0.6),
                         ((10.0, 6.0, 1.0), 2.6), ((10.0, 4.0, 1.0), 1.2)]:
            g.integrate_scan(SensorPose(np.array(pos), yaw, math.radians(80),
                                        math.radians(60), 4.5), world)
        start = np.array([3.0, 5.5, 1.0])
        goal = np.array([10.0, 5.0, 1.0])
        raw = astar_geometric(start, goal, g)
        gp = prune_path(raw, g)
        chain = guided_search(DroneState(start), goal, gp, g, LIMITS)
        ts = np.linspace(0, chain.duration, 400)
        for t in ts:
            p = chain.position(t)
            assert g.classify(p) == FREE
            assert not world.point_inside_obstacle(p)[0]

    def test_guided_beats_unguided_on_room_exit(self):
        world = make_world("room_exit")
        g = OccupancyGrid(world.bounds, 0.15)
        for pos, yaw in [((3.0, 5.5, 1.0), 0.0), ((5.0, 5.3, 1.0), 0.0),
                         ((8.0, 5.3, 1.0), 0.6), ((8.0, 5.3, 1.0), -0.6),
                         ((10.0, 6.0, 1.0), 2.6), ((10.0, 4.0, 1.0), 1.2)]:
            g.integrate_scan(SensorPose(np.array(pos), yaw, math.radians(80),
                                        math.radians(60), 4.5), world)
        start = np.array([3.0, 5.5, 1.0])
        goal = np.array([10.0, 5.0, 1.0])
        gp = prune_path(astar_geometric(start, goal, g), g)
        budget = 20000
        guided = guided_search(DroneState(start), goal, gp, g, LIMITS,
                               lam=(30, 80, 80), node_budget=budget)
        try:
            unguided_exp = guided_search(DroneState(start), goal, gp, g, LIMITS,
                                         lam=(30, 0, 0), node_budget=budget).expansions
        except SearchFailedError as e:
            unguided_exp = e.expansions
        assert guided.expansions <= 0.7 * unguided_exp


class TestRefine:
    def test_straight_line_input_collinear(self):
        g = free_grid((8, 4, 2))
        cf = select_duration((0.5, 2.0, 1.0), (0, 0, 0), (6.5, 2.0, 1.0), (0, 0, 0), 2.0)
        state = DroneState(np.array([0.5, 2.0, 1.0]))
        traj = refine_trajectory(cf, state, (6.5, 2.0, 1.0), 0.0, g, LIMITS)
        q = traj.control_points
        assert np.abs(q[:, 1] - 2.0).max() < 1e-3
        assert np.abs(q[:, 2] - 1.0).max() < 1e-3

    def test_duration_floor_applies(self):
        g = free_grid((8, 4, 2))
        cf = closed_form((0.5, 2.0, 1.0), (0, 0, 0), (3.0, 2.0, 1.0), (0, 0, 0), 2.0)
        state = DroneState(np.array([0.5, 2.0, 1.0]))
        traj = refine_trajectory(cf, state, (3.0, 2.0, 1.0), 4.084, g, LIMITS)
        assert traj.duration >= 4.084

    def test_start_state_pinned_exactly(self):
        g = free_grid((8, 4, 2))
        state = DroneState(np.array([0.5, 2.0, 1.0]), velocity=np.array([0.8, -0.2, 0.1]),
                           accel=np.array([0.2, 0.1, 0.0]))
        cf = select_duration(state.position, state.velocity, (6.0, 2.0, 1.0),
                             (0, 0, 0), 2.0)
        traj = refine_trajectory(cf, state, (6.0, 2.0, 1.0), 0.0, g, LIMITS)
        assert np.linalg.norm(traj.position(0.0) - state.position) < 1e-6
        assert np.linalg.norm(traj.velocity(0.0) - state.velocity) < 1e-6

    def test_collision_clearance_on_random_worlds(self):
        rng = np.random.default_rng(61)
        count = 0
        for _ in range(100):
            g = free_grid((6, 6, 2))
            # A few random pillar obstacles away from start/goal lines.
            for _ in range(rng.integers(1, 4)):
                ci = rng.integers(8, g.dims[0] - 8)
                cj = rng.integers(4, g.dims[1] - 4)
                g.cells[ci - 1:ci + 2, cj - 1:cj + 2, :] = OCCUPIED
            start = np.array([0.5, rng.uniform(0.6, 5.4), 1.0])
            goal = np.array([5.5, rng.uniform(0.6, 5.4), 1.0])
            if g.classify(start) != FREE or g.classify(goal) != FREE:
                continue
            try:
                traj = plan_position(DroneState(start), goal, g, LIMITS,
                                     node_budget=8000)
            except NoPathError:
                continue
            ts = np.linspace(0, traj.duration, 200)
            pts = traj.position(ts)
            occ = np.argwhere(g.cells == OCCUPIED)
            if occ.size:
                centers = g.origin + (occ + 0.5) * g.resolution
                dmin = min(np.linalg.norm(pts - c, axis=1).min() for c in centers)
                assert dmin >= g.resolution * 0.99
            count += 1
        assert count >= 50  # enough meaningful scenarios exercised

    def test_hull_feasibility(self):
        g = free_grid((10, 4, 2))
        state = DroneState(np.array([0.5, 2.0, 1.0]), velocity=np.array([1.2, 0.4, 0.0]))
        cf = select_duration(state.position, state.velocity, (9.0, 2.0, 1.0),
                             (0, 0, 0), LIMITS.v_max, a_max=LIMITS.a_max)
        traj = refine_trajectory(cf, state, (9.0, 2.0, 1.0), 0.0, g, LIMITS)
        assert traj.max_hull_speed() <= LIMITS.v_max * 1.05 + 1e-9
        assert traj.max_hull_accel() <= LIMITS.a_max * 1.05 + 1e-9

    def test_hull_feasibility_with_padding_floor(self):
        # A duration floor well past the input's end parks the tail at the goal;
        # the spline around the park transition must stay within limits.
        g = free_grid((10, 4, 2))
        state = DroneState(np.array([0.5, 2.0, 1.0]))
        cf = select_duration(state.position, state.velocity, (6.0, 2.0, 1.0),
                             (0, 0, 0), LIMITS.v_max, a_max=LIMITS.a_max)
        traj = refine_trajectory(cf, state, (6.0, 2.0, 1.0), cf.duration * 2.5, g, LIMITS)
        assert traj.duration >= cf.duration * 2.5
        assert traj.max_hull_speed() <= LIMITS.v_max * 1.05 + 1e-9
        assert traj.max_hull_accel() <= LIMITS.a_max * 1.05 + 1e-9

    def test_dump_csv(self, tmp_path):
        g = free_grid((6, 4, 2))
        cf = select_duration((0.5, 2.0, 1.0), (0, 0, 0), (5.0, 2.0, 1.0), (0, 0, 0), 2.0)
        traj = refine_trajectory(cf, DroneState(np.array([0.5, 2.0, 1.0])),
                                 (5.0, 2.0, 1.0), 0.0, g, LIMITS)
        path = tmp_path / "traj.csv"
        traj.dump_csv(path)
        assert path.read_text().splitlines()[0] == "t,x,y,z,vx,vy,vz"


class TestGradientOracle:
    def test_position_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(71)
        g = free_grid((6, 6, 2))
        for _ in range(3):
            ci = rng.integers(10, g.dims[0] - 10)
            cj = rng.integers(6, g.dims[1] - 6)
            g.cells[ci - 1:ci + 2, cj - 1:cj + 2, :] = OCCUPIED
        field = SmoothDistanceField(g, (0, 0, 0), tuple(g.dims - 1))
        h = 1e-5
        for _ in range(100):
            n_ctrl = int(rng.integers(8, 14))
            dt = rng.uniform(0.2, 0.5)
            q = np.column_stack([
                rng.uniform(1.0, 5.0, n_ctrl),
                rng.uniform(1.0, 5.0, n_ctrl),
                rng.uniform(0.4, 1.6, n_ctrl),
            ])
            basis = _basis_matrix(np.linspace(0, (n_ctrl - 3) * dt, 4 * n_ctrl),
                                  n_ctrl, dt)
            _, grad = position_cost_and_grad(q, dt, basis, field, LIMITS)
            fd = np.zeros_like(q)
            for i in range(n_ctrl):
                for ax in range(3):
                    qp = q.copy(); qp[i, ax] += h
                    qm = q.copy(); qm[i, ax] -= h
                    cp, _ = position_cost_and_grad(qp, dt, basis, field, LIMITS)
                    cm, _ = position_cost_and_grad(qm, dt, basis, field, LIMITS)
                    fd[i, ax] = (cp - cm) / (2 * h)
            denom = max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-8)
            assert np.linalg.norm(grad - fd) / denom < 1e-4
