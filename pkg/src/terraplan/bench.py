"""Synthetic scenes and the randomized trial harness.

Scene clouds are procedurally sampled on jittered lattices, so every
voxel column over a surface receives returns and reproducibility is
exact for a given (kind, seed). The harness reuses one terrain
assessment per scene and draws seeded start/goal pairs from standable
cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .errors import NoStandableError
from .planner import PlannerConfig, assess_terrain, plan

SCENE_KINDS = (
    "uneven_terrain", "multi_level", "corridor_with_tables",
    "ramp_between_floors",
)


@dataclass(frozen=True)
class SceneSpec:
    """Procedural scene request.

    extent is the x span in meters (other dimensions derive from it);
    density is surface samples per square meter. amplitude/frequency
    shape terrain noise, slab_gap/ramp_grade the level change, and
    table_clearance the ceiling height of corridor tables.
    """

    kind: str
    extent: float = 40.0
    seed: int = 0
    density: float = 100.0
    amplitude: float = 0.3
    frequency: float = 0.15
    slab_gap: float = 1.6
    ramp_grade: float = 0.25
    table_clearance: float = 0.6

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; choose from {SCENE_KINDS}")
        if self.extent <= 0 or self.density <= 0:
            raise ValueError("extent and density must be positive")


def _lattice(rng, x0, x1, y0, y1, spacing, jitter=0.35):
    """Jittered grid covering [x0,x1] x [y0,y1] with one point per cell."""
    xs = np.arange(x0 + 0.5 * spacing, x1, spacing)
    ys = np.arange(y0 + 0.5 * spacing, y1, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts += rng.uniform(-jitter * spacing, jitter * spacing, size=pts.shape)
    return pts


def _wall(rng, x0, x1, y, z0, z1, spacing):
    """Vertical sheet along x at fixed y."""
    xs = np.arange(x0 + 0.5 * spacing, x1, spacing)
    zs = np.arange(z0 + 0.5 * spacing, z1, spacing)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    n = gx.size
    jit = 0.35 * spacing
    pts = np.column_stack([gx.ravel(), np.full(n, float(y)), gz.ravel()])
    pts[:, 0] += rng.uniform(-jit, jit, n)
    pts[:, 2] += rng.uniform(-jit, jit, n)
    return pts


def _terrain_height(spec: SceneSpec, rng):
    """Band-limited smooth noise z(x, y) as a closed-form callable."""
    n_waves = 6
    theta = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    freq = rng.uniform(0.2 * spec.frequency, spec.frequency, n_waves)
    phase = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    amp = rng.uniform(0.5, 1.0, n_waves)
    amp *= spec.amplitude / amp.sum()

    def height(xy):
        proj = xy[:, 0][:, None] * np.cos(theta) + xy[:, 1][:, None] * np.sin(theta)
        return np.sin(2.0 * np.pi * freq * proj + phase) @ amp

    return height


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Deterministic synthetic cloud for the requested scene kind."""
    rng = np.random.default_rng(spec.seed)
    spacing = 1.0 / np.sqrt(spec.density)
    e = spec.extent
    if spec.kind == "uneven_terrain":
        xy = _lattice(rng, 0.0, e, 0.0, e, spacing)
        z = _terrain_height(spec, rng)(xy)
        return PointCloud(np.column_stack([xy, z]))

    if spec.kind == "ramp_between_floors":
        run = spec.slab_gap / spec.ramp_grade
        if run > 0.8 * e:
            raise ValueError("ramp does not fit: increase extent or grade")
        x_lo = 0.5 * (e - run)
        xy = _lattice(rng, 0.0, e, 0.0, 0.5 * e, spacing)
        z = np.clip((xy[:, 0] - x_lo) / run, 0.0, 1.0) * spec.slab_gap
        return PointCloud(np.column_stack([xy, z]))

    if spec.kind == "multi_level":
        run = spec.slab_gap / spec.ramp_grade
        if run > 0.6 * e:
            raise ValueError("ramp does not fit: increase extent or grade")
        x_lo = 0.5 * (e - run)
        x_hi = x_lo + run
        w = 0.5 * e
        parts = []
        lower = _lattice(rng, 0.0, x_lo, 0.0, w, spacing)
        parts.append(np.column_stack([lower, np.zeros(len(lower))]))
        upper = _lattice(rng, x_hi, e, 0.0, w, spacing)
        parts.append(np.column_stack([upper, np.full(len(upper), spec.slab_gap)]))
        ramp = _lattice(rng, x_lo, x_hi, 0.35 * w, 0.65 * w, spacing)
        rz = (ramp[:, 0] - x_lo) / run * spec.slab_gap
        parts.append(np.column_stack([ramp, rz]))
        return PointCloud(np.vstack(parts))

    # corridor_with_tables
    width = 3.0
    wall_h = 1.4
    y0, y1 = -0.5 * width, 0.5 * width
    parts = []
    floor = _lattice(rng, 0.0, e, y0, y1, spacing)
    parts.append(np.column_stack([floor, np.zeros(len(floor))]))
    parts.append(_wall(rng, 0.0, e, y0, 0.05, wall_h, spacing))
    parts.append(_wall(rng, 0.0, e, y1, 0.05, wall_h, spacing))
    half = 0.6
    for cx in (0.35 * e, 0.65 * e):
        top = _lattice(rng, cx - half, cx + half, y0, y1, spacing)
        parts.append(
            np.column_stack([top, np.full(len(top), spec.table_clearance)])
        )
    return PointCloud(np.vstack(parts))


# --------------------------------------------------------------------------
# polyline curvature baseline
# --------------------------------------------------------------------------

def polyline_curvature(points: np.ndarray) -> float:
    """Mean turning angle per meter at interior vertices of a polyline."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return 0.0
    e = np.diff(pts, axis=0)
    ln = np.linalg.norm(e, axis=1)
    keep = ln > 1e-12
    e, ln = e[keep], ln[keep]
    if len(e) < 2:
        return 0.0
    cosang = np.einsum("ij,ij->i", e[:-1], e[1:]) / (ln[:-1] * ln[1:])
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    return float(np.mean(ang / (0.5 * (ln[:-1] + ln[1:]))))


# --------------------------------------------------------------------------
# harness
# --------------------------------------------------------------------------

_AGG_KEYS = ("t_assess", "t_plan", "length", "kappa_m", "path_curvature")


@dataclass
class TrialReport:
    """Raw per-trial rows plus aggregates recomputable from them."""

    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def recompute(self) -> dict:
        agg = {"n_trials": len(self.rows)}
        done = [r for r in self.rows if r["status"] == "success"]
        agg["n_success"] = len(done)
        agg["success_rate"] = len(done) / len(self.rows) if self.rows else 0.0
        for key in _AGG_KEYS:
            vals = np.array([r[key] for r in done], dtype=np.float64)
            if len(vals) == 0:
                continue
            agg[f"{key}_mean"] = float(vals.mean())
            agg[f"{key}_median"] = float(np.median(vals))
            agg[f"{key}_p95"] = float(np.percentile(vals, 95))
        return agg

    def save_csv(self, path) -> None:
        if not self.rows:
            raise ValueError("no rows to save")
        cols = list(self.rows[0].keys())
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(str(r[c]) for c in cols) + "\n")

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"aggregates": self.aggregates, "rows": self.rows}, fh, indent=2)


def _sample_endpoints(rng, centers, min_sep, max_tries=200):
    for _ in range(max_tries):
        i, j = rng.integers(0, len(centers), size=2)
        if np.linalg.norm(centers[i] - centers[j]) >= min_sep:
            return centers[i], centers[j]
    raise NoStandableError(
        f"could not sample endpoints separated by {min_sep:g} m"
    )


def run_benchmark(specs, n_trials: int, config: PlannerConfig | None = None,
                  master_seed: int = 0) -> TrialReport:
    """Plan n_trials random start/goal pairs on each scene.

    Per-trial seeds derive from master_seed, so reports are bit-stable.
    Failed plans are recorded, not raised.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if isinstance(specs, SceneSpec):
        specs = [specs]
    config = config or PlannerConfig()
    report = TrialReport()
    for spec in specs:
        cloud = generate_scene(spec)
        model = assess_terrain(cloud, config)
        standable = np.argwhere(model.search_space.standable)
        centers = model.spec.index_to_center(standable)
        min_sep = 0.5 * spec.extent
        seeds = np.random.SeedSequence(master_seed).spawn(n_trials)
        for trial, seq in enumerate(seeds):
            rng = np.random.default_rng(seq)
            start, goal = _sample_endpoints(rng, centers, min_sep)
            result = plan(model, start, goal, config)
            row = {
                "scene": spec.kind,
                "scene_seed": spec.seed,
                "trial": trial,
                "status": result.status,
                "start": " ".join(f"{v:.4f}" for v in start),
                "goal": " ".join(f"{v:.4f}" for v in goal),
                "path_curvature": (
                    polyline_curvature(result.path.points)
                    if result.path is not None else 0.0
                ),
            }
            for key in ("length", "kappa_m", "duration", "j_init", "j_final",
                        "max_penalty", "min_clearance", "iterations",
                        "t_assess", "t_plan"):
                row[key] = result.metrics.get(key, 0.0)
            row["reason"] = result.metrics.get("reason", "")
            report.rows.append(row)
    report.aggregates = report.recompute()
    return report
