"""Penalized trajectory cost terms and their exact gradients.

Every inequality (penalty excess, clearance deficit, speed and
acceleration caps, height tracking) is scored at the constraint points
with a time-weighted rectangle rule; cubic clamping keeps each term C2
so the quasi-Newton solver sees continuous gradients. Gradients are
returned in coefficient space (per piece, 6x3) plus the direct duration
partials; mapping them to waypoint space is the trajectory's job.

Field objects need ``query(points) -> (values (N,), gradients (N, 3))``;
height maps analogously with 2-D gradients. Anything honoring that
protocol works, which is how the analytic stand-ins in the tests hook in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FieldBoundsError
from .minjerk import ConstraintPoints, MinJerkTrajectory


@dataclass(frozen=True)
class CostWeights:
    """Objective weights, thresholds, limits, and sampling density."""

    lambda_s: float = 1.0e4
    lambda_t: float = 10.0
    lambda_smooth: float = 1.0
    lambda_d: float = 1.0e3
    lambda_h: float = 100.0
    s_thr: float = 1.0
    d_thr: float = 0.1
    v_max: float = 1.5
    a_max: float = 3.0
    kappa: int = 16

    def __post_init__(self):
        for name in ("lambda_s", "lambda_t", "lambda_smooth", "lambda_d", "lambda_h"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.s_thr <= 0 or self.d_thr <= 0:
            raise ValueError("thresholds must be positive")
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("v_max and a_max must be positive")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")


@dataclass
class FieldSet:
    """Queryable environment bundle consumed by total_cost.

    ground/suitable may be None when the height term is off.
    """

    penalty: object = None
    distance: object = None
    ground: object = None
    suitable: object = None


@dataclass
class CostReport:
    """Weighted cost breakdown plus aggregated gradient blocks."""

    total: float
    js: float
    jt: float
    jm: float
    jd: float
    jh: float
    dj_dc: np.ndarray
    dj_dt: np.ndarray
    max_penalty_excess: float = 0.0
    max_clearance_deficit: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "safety": self.js,
            "time": self.jt,
            "smoothness": self.jm,
            "dynamics": self.jd,
            "height": self.jh,
            "max_penalty_excess": self.max_penalty_excess,
            "max_clearance_deficit": self.max_clearance_deficit,
            **self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _segment_starts(points: ConstraintPoints) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(points.kappa)[:-1]]).astype(np.intp)


def _scatter(points, per_sample_dc, per_sample_dt):
    """Reduce per-sample contributions into per-piece blocks."""
    starts = _segment_starts(points)
    dc = np.add.reduceat(per_sample_dc, starts, axis=0)
    dt = np.add.reduceat(per_sample_dt, starts)
    return dc, dt


def _query(fld, pts, points, name):
    try:
        return fld.query(pts)
    except FieldBoundsError as exc:
        for n in range(len(pts)):
            try:
                fld.query(pts[n].reshape(1, 3))
            except FieldBoundsError:
                j = n - int(_segment_starts(points)[points.piece[n]])
                raise FieldBoundsError(
                    exc.point, exc.lo, exc.hi,
                    label=f"{name} field, piece {int(points.piece[n])} sample {j}",
                ) from exc
        raise


def cost_safety(points: ConstraintPoints, T, penalty_field, distance_field,
                s_thr: float, d_thr: float):
    """Cubic penalty on penalty excess plus clearance deficit.

    Returns:
        (value, dj_dc (M,6,3), dj_dt (M,), diagnostics dict with the
        worst raw excess/deficit seen).
    """
    s, gs = _query(penalty_field, points.pos, points, "penalty")
    d, gd = _query(distance_field, points.pos, points, "distance")
    exc = s - s_thr
    deficit = d_thr - d
    g_s = np.maximum(exc, 0.0)
    g_c = np.maximum(deficit, 0.0)
    g = g_s + g_c
    wt = (T / points.kappa)[points.piece]
    value = float(np.sum(g ** 3 * wt))

    gsq = 3.0 * g ** 2
    gvec = (g_s > 0)[:, None] * gs - (g_c > 0)[:, None] * gd
    dc_n = np.einsum("n,nk,nj->nkj", gsq * wt, points.b0, gvec)
    dt_n = g ** 3 / points.kappa[points.piece] + gsq * wt * points.ratio * np.einsum(
        "nj,nj->n", gvec, points.vel
    )
    dc, dt = _scatter(points, dc_n, dt_n)
    diag = {
        "max_penalty_excess": float(np.max(exc, initial=-np.inf)),
        "max_clearance_deficit": float(np.max(deficit, initial=-np.inf)),
    }
    return value, dc, dt, diag


def cost_time(T):
    """Total duration; its duration gradient is exactly all ones."""
    T = np.asarray(T, dtype=np.float64)
    return float(T.sum()), np.zeros((len(T), 6, 3)), np.ones(len(T))


def cost_smoothness(traj: MinJerkTrajectory):
    """Closed-form squared-jerk integral and gradients."""
    value = traj.jerk_energy()
    dc, dt = traj.jerk_energy_gradient()
    return value, dc, dt


def cost_dynamics(points: ConstraintPoints, T, v_max: float, a_max: float):
    """Cubic penalties on squared speed and acceleration overruns."""
    v2 = np.einsum("nj,nj->n", points.vel, points.vel)
    a2 = np.einsum("nj,nj->n", points.acc, points.acc)
    g_v = np.maximum(v2 - v_max ** 2, 0.0)
    g_a = np.maximum(a2 - a_max ** 2, 0.0)
    wt = (T / points.kappa)[points.piece]
    value = float(np.sum((g_v ** 3 + g_a ** 3) * wt))

    cv = 6.0 * g_v ** 2 * wt
    ca = 6.0 * g_a ** 2 * wt
    dc_n = np.einsum("n,nk,nj->nkj", cv, points.b1, points.vel)
    dc_n += np.einsum("n,nk,nj->nkj", ca, points.b2, points.acc)
    dt_n = (g_v ** 3 + g_a ** 3) / points.kappa[points.piece]
    dt_n += cv * points.ratio * np.einsum("nj,nj->n", points.vel, points.acc)
    dt_n += ca * points.ratio * np.einsum("nj,nj->n", points.acc, points.jerk)
    dc, dt = _scatter(points, dc_n, dt_n)
    return value, dc, dt


def cost_height(points: ConstraintPoints, T, ground, suitable):
    """Squared tracking error against ground height plus target height."""
    xy = points.pos[:, :2]
    hg, ghg = ground.query(xy)
    hs, ghs = suitable.query(xy)
    err = points.pos[:, 2] - hg - hs
    wt = (T / points.kappa)[points.piece]
    value = float(np.sum(err ** 2 * wt))

    de_dp = np.empty_like(points.pos)
    de_dp[:, :2] = -(ghg + ghs)
    de_dp[:, 2] = 1.0
    coef = 2.0 * err * wt
    dc_n = np.einsum("n,nk,nj->nkj", coef, points.b0, de_dp)
    dt_n = err ** 2 / points.kappa[points.piece] + coef * points.ratio * np.einsum(
        "nj,nj->n", de_dp, points.vel
    )
    dc, dt = _scatter(points, dc_n, dt_n)
    return value, dc, dt


def total_cost(traj: MinJerkTrajectory, fields: FieldSet, weights: CostWeights,
               points: ConstraintPoints | None = None) -> CostReport:
    """Weighted sum of all active terms with aggregated gradients.

    A term is skipped (contributing exact zeros) when its weight is 0,
    so absent fields are fine as long as their weights are off.
    """
    if points is None:
        points = traj.sample_constraint_points(weights.kappa)
    m = traj.n_pieces
    dj_dc = np.zeros((m, 6, 3))
    dj_dt = np.zeros(m)
    js = jm = jd = jh = 0.0
    diag = {"max_penalty_excess": -np.inf, "max_clearance_deficit": -np.inf}

    if weights.lambda_s > 0:
        js, dc, dt, diag = cost_safety(
            points, traj.T, fields.penalty, fields.distance,
            weights.s_thr, weights.d_thr,
        )
        dj_dc += weights.lambda_s * dc
        dj_dt += weights.lambda_s * dt
    jt, _, dt = cost_time(traj.T)
    dj_dt += weights.lambda_t * dt
    if weights.lambda_smooth > 0:
        jm, dc, dt = cost_smoothness(traj)
        dj_dc += weights.lambda_smooth * dc
        dj_dt += weights.lambda_smooth * dt
    if weights.lambda_d > 0:
        jd, dc, dt = cost_dynamics(points, traj.T, weights.v_max, weights.a_max)
        dj_dc += weights.lambda_d * dc
        dj_dt += weights.lambda_d * dt
    if weights.lambda_h > 0:
        jh, dc, dt = cost_height(points, traj.T, fields.ground, fields.suitable)
        dj_dc += weights.lambda_h * dc
        dj_dt += weights.lambda_h * dt

    total = (weights.lambda_s * js + weights.lambda_t * jt
             + weights.lambda_smooth * jm + weights.lambda_d * jd
             + weights.lambda_h * jh)
    return CostReport(
        total=total, js=js, jt=jt, jm=jm, jd=jd, jh=jh,
        dj_dc=dj_dc, dj_dt=dj_dt,
        max_penalty_excess=diag["max_penalty_excess"],
        max_clearance_deficit=diag["max_clearance_deficit"],
    )
