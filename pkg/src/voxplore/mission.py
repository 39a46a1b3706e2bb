"""Receding-horizon exploration loop.

Each planning iteration gets a virtual time budget that adapts to how long the
previous iteration took (geometric growth above a floor). Planning always
starts from the state predicted one budget ahead, so the new trajectory can be
spliced seamlessly while the old one keeps executing. Replans trigger when the
remaining flight time runs low, a new obstacle appears near the path, or the
current target cluster has been observed away.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PlannerConfig
from .frontiers import FrontierManager, _is_frontier
from .heading import min_heading_time, plan_heading, single_min_time
from .paths import NoPathError, plan_position
from .sim import FlightSegment, HoverSegment, Simulator, StopSegment
from .tour import TourDistanceEstimator, build_cost_matrix, solve_atsp
from .types import DroneState
from .world import TrueWorld

COMMITTED = "committed"
REPLANNED = "replanned"
FINISHED = "finished"
FAILED = "failed"


@dataclass
class ReplanPolicy:
    """Adaptive planning budget: t_i = max(rho * t_{i-1}, t_min)."""

    rho: float = 1.3
    t_min: float = 0.1
    remaining_horizon: float = 1.0
    t_prev: float = 0.0

    def next_budget(self) -> float:
        return max(self.rho * self.t_prev, self.t_min)


def next_budget(policy: ReplanPolicy) -> float:
    return policy.next_budget()


@dataclass
class PlannerTick:
    index: int
    sim_time: float
    step_count: int
    budget_s: float
    plan_s: float
    wall_ms: float
    outcome: str
    n_clusters: int
    trigger: str
    remaining_at_trigger: float
    attempt: int = 1
    target_id: int = -1
    target_position: np.ndarray | None = None
    splice_time: float = math.nan
    splice_pos_err: float = math.nan
    splice_vel_err: float = math.nan


def planning_time_model(n_clusters: int, astar_expansions: int,
                        kino_expansions: int) -> float:
    """Deterministic surrogate for planning wall time, in seconds.

    Scales with the work actually performed so the adaptive budget reacts to
    hard scenes, while keeping runs byte-for-byte reproducible across hosts.
    """
    return (0.02 + 0.0015 * n_clusters + 1.0e-5 * astar_expansions
            + 1.5e-5 * kino_expansions)


@dataclass
class MissionResult:
    outcome: str
    metrics: object
    ticks: list = field(default_factory=list)

    def write_events_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("tick,i,t_i,plan_ms,outcome,n_clusters,target_x,target_y,target_z\n")
            for tk in self.ticks:
                if tk.target_position is None:
                    tx = ty = tz = math.nan
                else:
                    tx, ty, tz = tk.target_position
                f.write(f"{tk.step_count},{tk.index},{tk.budget_s:.6f},"
                        f"{tk.plan_s * 1000.0:.3f},{tk.outcome},{tk.n_clusters},"
                        f"{tx:.6f},{ty:.6f},{tz:.6f}\n")


class ExplorationMission:
    """Drives a Simulator until the frontier set is exhausted."""

    def __init__(self, world: TrueWorld, config: PlannerConfig,
                 start=None, start_yaw=None):
        self.config = config
        self.sim = Simulator(world, config, start=start, start_yaw=start_yaw)
        self.frontiers = FrontierManager(config.fov_h, config.fov_v,
                                         config.sensor_range)
        self.estimator = TourDistanceEstimator()
        self.policy = ReplanPolicy(rho=config.rho, t_min=config.t_min,
                                   remaining_horizon=config.replan_horizon)
        self.ticks: list[PlannerTick] = []
        self._tick_index = 0
        self._target = None          # (cluster_id, sampled cells) of the active goal
        self._n_active = 0

    # ------------------------------------------------------------------ loop

    def run(self, max_time: float = 600.0) -> MissionResult:
        sim = self.sim
        start_pose = sim.pose_at(0.0)
        spin_rate = 0.9 * self.config.yaw_rate_max
        sim.splice(HoverSegment(start_pose.position, start_pose.yaw, spin_rate,
                                2.0 * math.pi / spin_rate), 0.0)
        outcome = "timeout"
        record_period = 1.0 / self.config.sensor_rate_hz
        next_record = 0.0
        while sim.t < max_time:
            sim.step()
            if sim.t + 1e-9 >= next_record:
                next_record += record_period
                sim.record_timeline(self._n_active)
            trigger = self._replan_trigger()
            if trigger is None:
                continue
            tick = self.plan_iteration(trigger)
            if tick.outcome == FINISHED:
                sim.metrics.exploration_time = sim.t
                outcome = "finished"
                break
            if tick.outcome == FAILED:
                outcome = "failed"
                break
        sim.record_timeline(self._n_active)
        return MissionResult(outcome, sim.metrics, self.ticks)

    def _replan_trigger(self) -> str | None:
        sim = self.sim
        if sim.has_pending():
            if sim.path_blocked:
                return "obstacle"
            return None
        if sim.path_blocked:
            return "obstacle"
        if self._target_vanished():
            return "target_vanished"
        if sim.trajectory_exhausted():
            return "exhausted"
        if sim.remaining_duration() < self.policy.remaining_horizon:
            return "horizon"
        return None

    def should_replan(self) -> bool:
        return self._replan_trigger() is not None

    def _target_vanished(self) -> bool:
        if self._target is None:
            return False
        _, cells = self._target
        alive = sum(1 for c in cells if _is_frontier(self.sim.grid, c))
        return alive < max(1, len(cells) // 5)

    # ------------------------------------------------------------------ planning

    def plan_iteration(self, trigger: str = "manual") -> PlannerTick:
        sim = self.sim
        t_s = sim.t
        remaining = sim.remaining_duration()
        base_budget = self.policy.next_budget()
        tick = None
        for attempt, budget in enumerate((base_budget, 2.0 * base_budget), start=1):
            tick = self._attempt(t_s, budget, trigger, remaining, attempt)
            self.ticks.append(tick)
            if tick.outcome in (FINISHED, FAILED):
                return tick
            self.policy.t_prev = tick.plan_s
            if tick.outcome == COMMITTED:
                sim.path_blocked = False
                return tick
        # Two consecutive overruns: stop, then plan again from hover.
        pose = sim.pose_at(sim.t)
        sim.splice(StopSegment(pose.position, pose.velocity, pose.yaw,
                               self.config.a_max), sim.t)
        self._target = None
        return tick

    def _attempt(self, t_s: float, budget: float, trigger: str,
                 remaining: float, attempt: int) -> PlannerTick:
        sim = self.sim
        cfg = self.config
        wall_start = time.perf_counter()
        self._tick_index += 1
        t_splice = t_s + budget
        pred = sim.pose_at(t_splice)
        state = DroneState(pred.position, yaw=pred.yaw, velocity=pred.velocity,
                           accel=pred.accel)

        box, _ = sim.take_changes()
        clusters = self.frontiers.update(sim.grid, box)
        self._n_active = len(clusters)
        counters: dict = {}

        def finish(outcome, target=None, traj=None, heading=None, extra_exp=0):
            plan_s = planning_time_model(
                len(clusters), counters.get("astar_expansions", 0),
                counters.get("kino_expansions", 0) + extra_exp)
            wall_ms = (time.perf_counter() - wall_start) * 1000.0
            tk = PlannerTick(
                index=self._tick_index, sim_time=t_s, step_count=sim.step_count,
                budget_s=budget, plan_s=plan_s, wall_ms=wall_ms, outcome=outcome,
                n_clusters=len(clusters), trigger=trigger,
                remaining_at_trigger=remaining, attempt=attempt)
            if target is not None:
                tk.target_id = target.id
                tk.target_position = target.best_viewpoint.position.copy()
            if outcome == COMMITTED:
                seg = FlightSegment(traj, heading)
                tk.splice_time = t_splice
                tk.splice_pos_err = float(np.linalg.norm(
                    np.asarray(seg.position(0.0)) - pred.position))
                tk.splice_vel_err = float(np.linalg.norm(
                    np.asarray(seg.velocity(0.0)) - pred.velocity))
                sim.splice(seg, t_splice)
                self._target = (target.id, self._sample_cells(target))
            return tk

        if not clusters:
            return finish(FINISHED)

        self.estimator.update(sim.grid)
        matrix = build_cost_matrix(state, clusters, sim.grid, cfg.tour(),
                                   cfg.limits(), self.estimator)
        if matrix.n == 0:
            return finish(FAILED)
        order = solve_atsp(matrix)
        by_id = {c.id: c for c in clusters}
        vps = [c.best_viewpoint for c in clusters]

        for node in order:
            target = by_id[matrix.cluster_ids[node - 1]]
            v_n = target.best_viewpoint
            t_floor = min_heading_time(vps, v_n, state, sim.grid,
                                       cfg.yaw_rate_max, cfg.tau,
                                       d_thr=cfg.local_radius,
                                       two_stage=cfg.two_stage)
            try:
                traj = plan_position(state, v_n.position, sim.grid, cfg.limits(),
                                     lam=cfg.lam(), t_floor=t_floor,
                                     clearance=cfg.clearance,
                                     node_budget=cfg.node_budget,
                                     counters=counters,
                                     coarse_grid=self.estimator.coarse)
            except NoPathError:
                continue
            heading = plan_heading(vps, v_n, state, traj.duration, sim.grid,
                                   cfg.yaw_rate_max, cfg.yaw_acc_max, tau=cfg.tau,
                                   d_thr=cfg.local_radius, two_stage=cfg.two_stage)
            plan_s = planning_time_model(
                len(clusters), counters.get("astar_expansions", 0),
                counters.get("kino_expansions", 0))
            outcome = COMMITTED if plan_s <= budget else REPLANNED
            return finish(outcome, target=target, traj=traj, heading=heading)
        return finish(FAILED)

    def _sample_cells(self, cluster, cap: int = 16):
        cells = cluster.cells
        stride = max(1, len(cells) // cap)
        return [tuple(int(v) for v in c) for c in cells[::stride]]
