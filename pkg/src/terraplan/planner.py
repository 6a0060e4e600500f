"""End-to-end planning pipeline.

assess_terrain turns a raw cloud into immutable, reusable products
(ground filter, occupancy + distance field, travel penalty, search
space, height maps); plan searches a coarse path, lifts it to the
preferred travel height, and refines it with the quasi-Newton solver.

Boundary z is always lifted to ground + preferred height: callers pass
ground-level start/goal points (standable cells), while collision and
height costs are defined for the body center above the surface.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .cloud import PointCloud, median_spacing
from .errors import NoPathError, NoStandableError, SolverError
from .gridmap import EsdfField, GridSpec, OccupancyGrid, build_esdf, rasterize
from .interp import BilinearMap
from .minjerk import BoundaryState, MinJerkTrajectory
from .objective import CostReport, CostWeights, FieldSet, total_cost
from .penalty import (PenaltyField, PenaltyParams, PoseField,
                      PoseParams, build_penalty_field, build_pose_field)
from .search import GridPath, SearchSpace, astar, build_search_space
from .solver import (SolveTrace, SolverOptions, inverse_time_map, minimize,
                     time_map)
from .validation import check_points, check_vector3
from .vgf import VgfParams, valid_ground_filter


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VgfConfig:
    """Ground-filter knobs; eps_z None = twice the median point spacing."""

    radius: float = 0.5
    max_tilt: float = 0.6108652381980153
    eps_z: float | None = None


@dataclass(frozen=True)
class GridConfig:
    """Voxel size and cloud-to-grid padding.

    z_above None pads by the max travel height plus 0.5 m so queries at
    body height stay interpolatable.
    """

    resolution: float = 0.1
    xy_margin: float = 0.6
    z_below: float = 0.3
    z_above: float | None = None


@dataclass(frozen=True)
class SearchConfig:
    """step_max None = twice the grid resolution."""

    step_max: float | None = None
    h_clear: int = 1


@dataclass(frozen=True)
class InitConfig:
    """Path subsampling stride (cells) and initial speed fraction."""

    stride: int = 5
    v_init_frac: float = 0.5
    min_duration: float = 0.1


@dataclass(frozen=True)
class HeightConfig:
    """Travel-height policy.

    The preferred height over open ground is h_max; under a ceiling it
    drops to clearance - clearance_margin (floored at h_min). The target
    map is min-filtered by erode_radius then box-blurred by blur_radius,
    so descent starts before a ceiling and the under-ceiling plateau is
    never raised by smoothing (erode_radius must stay >= blur_radius).
    ceiling_offset is how far above the ground a return must be to count
    as ceiling rather than ground roughness.
    """

    h_min: float = 0.3
    h_max: float = 1.0
    clearance_margin: float = 0.15
    ceiling_offset: float = 0.3
    erode_radius: float = 0.5
    blur_radius: float = 0.25


@dataclass(frozen=True)
class PlannerConfig:
    """Per-stage parameter blocks plus pipeline-level policy."""

    grid: GridConfig = field(default_factory=GridConfig)
    vgf: VgfConfig = field(default_factory=VgfConfig)
    pose: PoseParams = field(default_factory=PoseParams)
    penalty: PenaltyParams = field(default_factory=PenaltyParams)
    search: SearchConfig = field(default_factory=SearchConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    # trajectory costs sit on clamped, kinked field interpolants where the
    # descent crawls along creases; demanding quadratic-model accuracy
    # there just burns the iteration budget for sub-percent cost changes
    solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(rel_cost_tolerance=1e-4,
                                              max_iterations=300))
    init: InitConfig = field(default_factory=InitConfig)
    heights: HeightConfig = field(default_factory=HeightConfig)
    seed: int = 0
    # the optimizer aims slightly inside the reported thresholds so the
    # clamped-penalty equilibrium lands on the feasible side of them
    s_margin: float = 0.05
    d_margin: float = 0.02

    def validate(self) -> "PlannerConfig":
        if self.weights.d_thr < self.grid.resolution:
            raise ValueError(
                "collision threshold below the grid resolution cannot be "
                f"resolved: d_thr={self.weights.d_thr}, "
                f"resolution={self.grid.resolution}"
            )
        if self.weights.kappa < 4:
            raise ValueError("kappa must be >= 4 for stable penalty sampling")
        if self.init.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0 < self.init.v_init_frac <= 1:
            raise ValueError("v_init_frac must be in (0, 1]")
        if self.heights.erode_radius < self.heights.blur_radius:
            raise ValueError("erode_radius must be >= blur_radius")
        return self

    _BLOCKS = {
        "grid": GridConfig, "vgf": VgfConfig, "pose": PoseParams,
        "penalty": PenaltyParams, "search": SearchConfig,
        "weights": CostWeights, "solver": SolverOptions,
        "init": InitConfig, "heights": HeightConfig,
    }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PlannerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in doc.items():
            block = cls._BLOCKS.get(name)
            if block is not None:
                extra = set(value) - {f.name for f in dataclasses.fields(block)}
                if extra:
                    raise KeyError(f"unknown keys in {name}: {sorted(extra)}")
                if name == "penalty" and "component_weights" in value:
                    value = dict(value)
                    value["component_weights"] = tuple(value["component_weights"])
                kwargs[name] = block(**value)
            else:
                kwargs[name] = value
        return cls(**kwargs).validate()

    @classmethod
    def from_json_file(cls, path) -> "PlannerConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, assignments) -> "PlannerConfig":
        """Apply dotted key=value strings, e.g. weights.lambda_s=500."""
        doc = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"override {item!r} must look like key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = doc
            parts = key.strip().split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise KeyError(f"unknown config section {p!r}")
                node = node[p]
            if parts[-1] not in node:
                raise KeyError(f"unknown config key {key.strip()!r}")
            node[parts[-1]] = value
        return type(self).from_dict(doc)


# --------------------------------------------------------------------------
# out-of-bounds-safe field views
# --------------------------------------------------------------------------

class ExtendedField:
    """First-order extension of a gridded field beyond its hull.

    Queries are clamped into the interpolatable region; outside it the
    value continues linearly plus a signed quadratic ramp, so the
    optimizer always sees finite C1 data that pushes it back inside
    (sign +1 grows the value outside, -1 shrinks it, 0 extends flat).
    """

    def __init__(self, inner, lo, hi, sign: float = 1.0, stiffness: float = 100.0):
        self.inner = inner
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.sign = float(sign)
        self.stiffness = float(stiffness)

    def query(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        clipped = np.clip(pts, self.lo, self.hi)
        vals, grads = self.inner.query(clipped)
        delta = pts - clipped
        if np.any(delta):
            k = self.sign * self.stiffness
            vals = vals + np.einsum("nj,nj->n", grads, delta)
            vals = vals + 0.5 * k * np.einsum("nj,nj->n", delta, delta)
            grads = grads + k * delta
        return vals, grads


class _MapQuery:
    """Adapts BilinearMap's value_and_grad to the query protocol."""

    def __init__(self, bmap: BilinearMap):
        self.bmap = bmap

    def query(self, xy):
        return self.bmap.value_and_grad(xy)


def _extended_map(bmap: BilinearMap) -> ExtendedField:
    return ExtendedField(_MapQuery(bmap), bmap.lo, bmap.hi, sign=0.0, stiffness=0.0)


# --------------------------------------------------------------------------
# terrain model
# --------------------------------------------------------------------------

@dataclass
class TerrainModel:
    """Immutable per-scene products shared by all plan() calls."""

    spec: GridSpec
    valid_cloud: PointCloud
    occupancy: OccupancyGrid
    esdf: EsdfField
    pose_field: PoseField
    penalty_field: PenaltyField
    search_space: SearchSpace
    ground_map: BilinearMap
    suitable_map: BilinearMap
    t_assess: float

    def field_set(self) -> FieldSet:
        """Clamped, everywhere-finite field views for the optimizer."""
        pen = ExtendedField(
            self.penalty_field, self.penalty_field._interp.lo,
            self.penalty_field._interp.hi, sign=1.0, stiffness=100.0,
        )
        dist = ExtendedField(
            self.esdf, self.esdf._interp.lo, self.esdf._interp.hi,
            sign=-1.0, stiffness=10.0,
        )
        return FieldSet(
            penalty=pen, distance=dist,
            ground=_extended_map(self.ground_map),
            suitable=_extended_map(self.suitable_map),
        )

    def travel_height(self, xy) -> np.ndarray:
        """Preferred absolute z over (N, 2) horizontal positions."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        fs = self.field_set()
        hg, _ = fs.ground.query(xy)
        hs, _ = fs.suitable.query(xy)
        return hg + hs


def _grid_spec_for(cloud: PointCloud, config: PlannerConfig) -> GridSpec:
    lo, hi = cloud.bounds()
    g = config.grid
    z_above = g.z_above
    if z_above is None:
        z_above = config.heights.h_max + 0.5
    origin = (lo[0] - g.xy_margin, lo[1] - g.xy_margin, lo[2] - g.z_below)
    span = (
        hi[0] + g.xy_margin - origin[0],
        hi[1] + g.xy_margin - origin[1],
        hi[2] + z_above - origin[2],
    )
    dims = tuple(max(int(np.ceil(s / g.resolution)), 1) for s in span)
    return GridSpec(origin=origin, resolution=g.resolution, dims=dims)


def _column_min(spec: GridSpec, points: np.ndarray, select=None) -> np.ndarray:
    """Per-(x, y)-column minimum z of the given points (inf when empty)."""
    nx, ny = spec.dims[0], spec.dims[1]
    out = np.full(nx * ny, np.inf)
    if len(points) == 0:
        return out.reshape(nx, ny)
    idx = spec.world_to_index(points)
    ok = (idx[:, 0] >= 0) & (idx[:, 0] < nx) & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
    if select is not None:
        ok &= select
    flat = idx[ok, 0] * ny + idx[ok, 1]
    np.minimum.at(out, flat, points[ok, 2])
    return out.reshape(nx, ny)


def _build_height_maps(spec: GridSpec, valid_cloud: PointCloud,
                       cloud: PointCloud, cfg: HeightConfig):
    res = spec.resolution
    ground = _column_min(spec, valid_cloud.points)
    have = np.isfinite(ground)
    if not have.any():
        raise NoStandableError("no column contains a standable point")
    if not have.all():
        ind = ndimage.distance_transform_edt(
            ~have, return_distances=False, return_indices=True
        )
        ground = ground[ind[0], ind[1]]

    # ceiling: lowest return clearly above the local ground level
    nx, ny = spec.dims[0], spec.dims[1]
    idx = spec.world_to_index(cloud.points)
    inb = (idx[:, 0] >= 0) & (idx[:, 0] < nx) & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
    flat = np.clip(idx[:, 0], 0, nx - 1) * ny + np.clip(idx[:, 1], 0, ny - 1)
    overhead = cloud.points[:, 2] > ground.ravel()[flat] + cfg.ceiling_offset
    ceiling = _column_min(spec, cloud.points, select=inb & overhead)

    clearance = ceiling - ground
    suitable = np.clip(clearance - cfg.clearance_margin, cfg.h_min, cfg.h_max)
    e = 2 * int(np.ceil(cfg.erode_radius / res)) + 1
    suitable = ndimage.minimum_filter(suitable, size=e, mode="nearest")
    b = 2 * int(np.ceil(cfg.blur_radius / res)) + 1
    suitable = ndimage.uniform_filter(suitable, size=b, mode="nearest")

    origin_xy = spec.origin_array[:2]
    return BilinearMap(ground, origin_xy, res), BilinearMap(suitable, origin_xy, res)


def assess_terrain(cloud: PointCloud, config: PlannerConfig) -> TerrainModel:
    """Build every per-scene product; wall time lands on t_assess."""
    if len(cloud) == 0:
        raise ValueError("cannot assess an empty cloud")
    config.validate()
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)

    eps = config.vgf.eps_z
    if eps is None:
        eps = min(2.0 * median_spacing(cloud), 0.5 * config.vgf.radius)
    vgf_params = VgfParams(r=config.vgf.radius, theta=config.vgf.max_tilt, eps_z=eps)

    valid = valid_ground_filter(cloud, vgf_params)
    if len(valid) == 0:
        raise NoStandableError("ground filter rejected every point")

    spec = _grid_spec_for(cloud, config)
    occ = rasterize(cloud, spec)
    esdf = build_esdf(occ)
    pose = build_pose_field(occ, cloud, config.pose, rng)
    penalty = build_penalty_field(occ, pose, config.penalty)
    step_max = config.search.step_max
    if step_max is None:
        step_max = 2.0 * spec.resolution
    # a cell can host the robot center only if the diffused penalty at its
    # center clears the safety threshold; endpoints snap to cell centers and
    # stay pinned there, so admitting hotter cells (lethal plateaus or their
    # dilation shadows) can only produce trajectories that fail the safety
    # check no matter how the solver moves the interior
    hostable = pose.valid & (penalty.values <= config.weights.s_thr)
    space = build_search_space(valid, spec, step_max, config.search.h_clear,
                               pose_valid=hostable)
    ground_map, suitable_map = _build_height_maps(spec, valid, cloud, config.heights)

    return TerrainModel(
        spec=spec, valid_cloud=valid, occupancy=occ, esdf=esdf,
        pose_field=pose, penalty_field=penalty, search_space=space,
        ground_map=ground_map, suitable_map=suitable_map,
        t_assess=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# trajectory initialization and objective
# --------------------------------------------------------------------------

def initialize_trajectory(path: GridPath, model: TerrainModel,
                          config: PlannerConfig) -> MinJerkTrajectory:
    """Rest-to-rest quintic through subsampled path waypoints.

    Waypoints keep the path's horizontal track but ride at the preferred
    travel height; durations come from segment length at the configured
    fraction of v_max.
    """
    pts = path.points
    if len(pts) < 2:
        raise ValueError("path must contain at least 2 points")
    # near-uniform subsampling: a trailing stub piece would carry tiny
    # T and ruin the conditioning of the jerk term (~T^-5)
    n_pieces = max(int(round((len(pts) - 1) / config.init.stride)), 1)
    keep = np.unique(np.round(np.linspace(0, len(pts) - 1, n_pieces + 1)).astype(int))
    wp = pts[keep].copy()
    wp[:, 2] = model.travel_height(wp[:, :2])

    v_init = config.init.v_init_frac * config.weights.v_max
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    T = np.maximum(seg / v_init, config.init.min_duration)
    start = BoundaryState.at_rest(wp[0])
    end = BoundaryState.at_rest(wp[-1])
    return MinJerkTrajectory(start, end, wp[1:-1], T)


def trajectory_objective(fields: FieldSet, weights: CostWeights,
                         start: BoundaryState, end: BoundaryState,
                         n_pieces: int):
    """Objective over x = [waypoints, log-durations] for the solver.

    Returns a callable x -> (J, dJ/dx) with gradients routed through
    the trajectory adjoint and the duration map.
    """
    nq = 3 * (n_pieces - 1)

    def f(x):
        q = x[:nq].reshape(-1, 3)
        t, jac = time_map(x[nq:])
        traj = MinJerkTrajectory(start, end, q, t)
        report = total_cost(traj, fields, weights)
        dq, dt = traj.propagate_gradient(report.dj_dc, report.dj_dt)
        return report.total, np.concatenate([dq.ravel(), dt * jac])

    return f


def trajectory_length(traj: MinJerkTrajectory, n_nodes: int = 24) -> float:
    """Arc length by Gauss-Legendre quadrature per piece."""
    nodes, wts = np.polynomial.legendre.leggauss(n_nodes)
    total = 0.0
    for i in range(traj.n_pieces):
        t0 = traj.times[i]
        half = 0.5 * traj.T[i]
        ts = t0 + half * (nodes + 1.0)
        v = traj.evaluate_many(ts, 1)
        total += half * float(np.sum(wts * np.linalg.norm(v, axis=1)))
    return total


def mean_curvature(traj: MinJerkTrajectory, samples_per_piece: int = 100,
                   speed_floor: float = 1e-3) -> float:
    """Mean of |v x a| / |v|^3, skipping near-stationary samples."""
    ts = []
    for i in range(traj.n_pieces):
        ts.append(traj.times[i] + (np.arange(samples_per_piece) + 0.5)
                  / samples_per_piece * traj.T[i])
    ts = np.concatenate(ts)
    v = traj.evaluate_many(ts, 1)
    a = traj.evaluate_many(ts, 2)
    speed = np.linalg.norm(v, axis=1)
    keep = speed >= speed_floor
    if not keep.any():
        return 0.0
    cross = np.cross(v[keep], a[keep])
    return float(np.mean(np.linalg.norm(cross, axis=1) / speed[keep] ** 3))


# --------------------------------------------------------------------------
# plan
# --------------------------------------------------------------------------

@dataclass
class PlanResult:
    """Planning outcome: trajectory, costs, metrics, and diagnostics."""

    status: str
    trajectory: MinJerkTrajectory | None
    costs: CostReport | None
    metrics: dict
    path: GridPath | None = None
    trace: SolveTrace | None = None

    @property
    def success(self) -> bool:
        return self.status == "success"

    def to_dict(self, include_timings: bool = True) -> dict:
        metrics = {
            k: v for k, v in self.metrics.items()
            if include_timings or not k.startswith("t_")
        }
        doc = {"status": self.status, "metrics": metrics}
        if self.costs is not None:
            doc["costs"] = self.costs.to_dict()
        if self.trajectory is not None:
            doc["trajectory"] = json.loads(self.trajectory.to_json())
        if self.path is not None:
            doc["path"] = self.path.points.tolist()
        return doc

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2)


def _tightened(weights: CostWeights, config: PlannerConfig) -> CostWeights:
    return dataclasses.replace(
        weights,
        s_thr=max(weights.s_thr - config.s_margin, 1e-6),
        d_thr=weights.d_thr + config.d_margin,
    )


def plan(model: TerrainModel, start, goal, config: PlannerConfig) -> PlanResult:
    """Search, initialize, and optimize a trajectory from start to goal.

    start/goal are ground-level points; they snap to standable cells and
    the trajectory's endpoints ride at the preferred travel height above
    them. Status is "success" only when the solver terminated by
    tolerance and every constraint point respects both safety thresholds
    (to 1e-3); "no_path" when the search space disconnects them.
    """
    start = check_vector3(start, "start")
    goal = check_vector3(goal, "goal")
    config.validate()
    t0 = time.perf_counter()
    try:
        path = astar(model.search_space, start, goal)
    except NoPathError as exc:
        return PlanResult(
            status="no_path", trajectory=None, costs=None,
            metrics={"explored": exc.explored, "t_plan": time.perf_counter() - t0,
                     "t_assess": model.t_assess},
        )

    init = initialize_trajectory(path, model, config)
    fields = model.field_set()
    internal = _tightened(config.weights, config)
    f = trajectory_objective(fields, internal, init.start, init.end, init.n_pieces)
    x0 = np.concatenate([init.q.ravel(), inverse_time_map(init.T)])
    j_init = f(x0)[0]

    try:
        x_star, trace = minimize(f, x0, config.solver)
    except SolverError:
        x_star, trace = x0, None

    nq = 3 * (init.n_pieces - 1)
    t_final, _ = time_map(x_star[nq:])
    traj = MinJerkTrajectory(init.start, init.end, x_star[:nq].reshape(-1, 3), t_final)
    report = total_cost(traj, fields, internal)

    pts = traj.sample_constraint_points(config.weights.kappa)
    s_vals, _ = fields.penalty.query(pts.pos)
    d_vals, _ = fields.distance.query(pts.pos)
    tol = 1e-3
    safe = bool(
        np.all(s_vals <= config.weights.s_thr + tol)
        and np.all(d_vals >= config.weights.d_thr - tol)
    )
    converged = trace is not None and trace.reason in ("grad_tol", "cost_tol")
    status = "success" if (converged and safe) else "infeasible"

    metrics = {
        "length": trajectory_length(traj),
        "kappa_m": mean_curvature(traj),
        "duration": traj.total_time,
        "j_init": float(j_init),
        "j_final": float(report.total),
        "max_penalty": float(np.max(s_vals)),
        "min_clearance": float(np.min(d_vals)),
        "iterations": 0 if trace is None else trace.n_iterations,
        "reason": "error" if trace is None else trace.reason,
        "t_assess": model.t_assess,
        "t_plan": time.perf_counter() - t0,
    }
    return PlanResult(status=status, trajectory=traj, costs=report,
                      metrics=metrics, path=path, trace=trace)


def plan_cloud(cloud: PointCloud, start, goal,
               config: PlannerConfig | None = None) -> PlanResult:
    """One-shot convenience: assess the cloud, then plan through it."""
    config = config or PlannerConfig()
    model = assess_terrain(cloud, config)
    return plan(model, start, goal, config)


class GroundPlanner(BaseEstimator):
    """Estimator-style front door: fit on a cloud, then plan queries.

    Parameters
    ----------
    config : PlannerConfig or dict or None
        Pipeline configuration; dicts are parsed as ``PlannerConfig.from_dict``.
    seed : int or None
        Overrides the config seed when given.
    """

    def __init__(self, config=None, seed=None):
        self.config = config
        self.seed = seed

    def _resolved_config(self) -> PlannerConfig:
        cfg = self.config
        if cfg is None:
            cfg = PlannerConfig()
        elif isinstance(cfg, dict):
            cfg = PlannerConfig.from_dict(cfg)
        if self.seed is not None:
            cfg = dataclasses.replace(cfg, seed=self.seed)
        return cfg.validate()

    def fit(self, X, y=None):
        """Assess terrain from an (N, 3) point array (or PointCloud)."""
        cloud = X if isinstance(X, PointCloud) else PointCloud(check_points(X))
        self.config_ = self._resolved_config()
        self.model_ = assess_terrain(cloud, self.config_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("GroundPlanner must be fitted with a cloud first")

    def plan(self, start, goal) -> PlanResult:
        self._check_fitted()
        return plan(self.model_, start, goal, self.config_)

    def predict(self, X) -> list:
        """Plan each row of an (N, 6) [start_xyz, goal_xyz] array."""
        self._check_fitted()
        rows = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if rows.shape[1] != 6:
            raise ValueError("predict expects rows of [sx, sy, sz, gx, gy, gz]")
        return [self.plan(r[:3], r[3:]) for r in rows]
