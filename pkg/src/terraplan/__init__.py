"""Optimization-based 3D motion planning for ground robots.

Pipeline: filter a raw point cloud down to standable ground, build
voxel penalty and distance fields from it, search a coarse path, then
optimize a smooth height-aware trajectory along it.
"""

from .bench import SceneSpec, TrialReport, generate_scene, run_benchmark
from .cloud import PointCloud, load_cloud, median_spacing, save_cloud
from .errors import (
    CloudFormatError,
    FieldBoundsError,
    NoObstacleError,
    NoPathError,
    NoStandableError,
    SnapError,
    SolverError,
    TerraplanError,
)
from .gridmap import (
    EsdfField,
    GridSpec,
    OccupancyGrid,
    build_esdf,
    load_field,
    rasterize,
    save_field,
)
from .minjerk import BoundaryState, MinJerkTrajectory
from .objective import CostReport, CostWeights, FieldSet, total_cost
from .penalty import (
    PenaltyField,
    PenaltyParams,
    PoseField,
    PoseParams,
    build_penalty_field,
    build_pose_field,
)
from .planner import (
    GroundPlanner,
    PlannerConfig,
    PlanResult,
    TerrainModel,
    assess_terrain,
    plan,
    plan_cloud,
)
from .search import GridPath, SearchSpace, astar, build_search_space
from .solver import SolverOptions, SolveTrace, minimize
from .vgf import ValidGroundFilter, VgfParams, VgfStats, valid_ground_filter

__version__ = "0.1.0"

__all__ = [
    "BoundaryState",
    "CloudFormatError",
    "CostReport",
    "CostWeights",
    "EsdfField",
    "FieldBoundsError",
    "FieldSet",
    "GridPath",
    "GridSpec",
    "GroundPlanner",
    "MinJerkTrajectory",
    "NoObstacleError",
    "NoPathError",
    "NoStandableError",
    "OccupancyGrid",
    "PenaltyField",
    "PenaltyParams",
    "PlanResult",
    "PlannerConfig",
    "PointCloud",
    "PoseField",
    "PoseParams",
    "SceneSpec",
    "SearchSpace",
    "SnapError",
    "SolverError",
    "SolverOptions",
    "SolveTrace",
    "TerrainModel",
    "TerraplanError",
    "TrialReport",
    "ValidGroundFilter",
    "VgfParams",
    "VgfStats",
    "assess_terrain",
    "astar",
    "build_esdf",
    "build_penalty_field",
    "build_pose_field",
    "build_search_space",
    "generate_scene",
    "load_cloud",
    "load_field",
    "median_spacing",
    "minimize",
    "plan",
    "plan_cloud",
    "rasterize",
    "run_benchmark",
    "save_cloud",
    "save_field",
    "total_cost",
    "valid_ground_filter",
]
