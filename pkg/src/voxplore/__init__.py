"""Frontier-driven autonomous exploration planning in a deterministic voxel world."""

from .config import ConfigError, PlannerConfig, load_config
from .frontiers import FrontierCluster, FrontierManager, Viewpoint
from .grid import (
    FREE,
    OCCUPIED,
    OUT_OF_BOUNDS,
    UNKNOWN,
    ExplorationBounds,
    OccupancyGrid,
    SensorPose,
)
from .heading import (
    HeadingPlan,
    YawTrajectory,
    find_middle_yaw,
    min_heading_time,
    optimize_yaw,
    plan_heading,
    two_stage_min_time,
    viewpoints_in_local,
)
from .mission import (
    ExplorationMission,
    MissionResult,
    PlannerTick,
    ReplanPolicy,
    next_budget,
)
from .paths import (
    ClosedFormTrajectory,
    GuidePath,
    KinoChain,
    NoPathError,
    PositionTrajectory,
    SearchFailedError,
    astar_geometric,
    closed_form,
    guided_search,
    plan_position,
    prune_path,
    refine_trajectory,
    select_duration,
    use_closed_form,
)
from .sim import RunMetrics, Simulator
from .tour import (
    TourConfig,
    TourCostMatrix,
    TourDistanceEstimator,
    build_cost_matrix,
    edge_priority_distance,
    motion_lower_bound,
    pocket_depth,
    solve_atsp,
    velocity_change_cost,
)
from .types import DroneState, DynamicLimits
from .world import Box, Cylinder, TrueWorld, load_world_file, make_world

__all__ = [
    "UNKNOWN", "FREE", "OCCUPIED", "OUT_OF_BOUNDS",
    "ExplorationBounds", "OccupancyGrid", "SensorPose",
    "Box", "Cylinder", "TrueWorld", "make_world", "load_world_file",
    "FrontierCluster", "FrontierManager", "Viewpoint",
    "DroneState", "DynamicLimits",
    "TourConfig", "TourCostMatrix", "TourDistanceEstimator",
    "edge_priority_distance", "pocket_depth", "velocity_change_cost",
    "motion_lower_bound", "build_cost_matrix", "solve_atsp",
    "HeadingPlan", "YawTrajectory", "viewpoints_in_local", "find_middle_yaw",
    "two_stage_min_time", "min_heading_time", "plan_heading", "optimize_yaw",
    "GuidePath", "ClosedFormTrajectory", "KinoChain", "PositionTrajectory",
    "NoPathError", "SearchFailedError", "astar_geometric", "prune_path",
    "use_closed_form", "closed_form", "select_duration", "guided_search",
    "refine_trajectory", "plan_position",
    "ReplanPolicy", "PlannerTick", "ExplorationMission", "MissionResult",
    "next_budget",
    "Simulator", "RunMetrics",
    "PlannerConfig", "ConfigError", "load_config",
]
