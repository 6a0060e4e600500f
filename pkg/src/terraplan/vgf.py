"""Valid-ground filtering: keep only points a ground robot can stand on.

A point survives when, within the robot's clearance ball of radius ``r``:

* rule A: nothing sits more than ``eps_z`` above it (overhead or lateral
  obstruction), and
* rule B: every neighbor more than ``eps_z`` below it subtends a slope
  angle below the standable tilt limit ``theta``.

The ``eps_z`` band absorbs sensor noise on flat ground; with ``eps_z = 0``
an ideal plane sample still passes both rules because same-height
neighbors constrain nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .cloud import PointCloud, median_spacing
from .validation import check_points


@dataclass(frozen=True)
class VgfParams:
    """Clearance radius (m), max standable tilt (rad), vertical noise band (m)."""

    r: float
    theta: float
    eps_z: float = 0.0

    def __post_init__(self):
        if not (self.r > 0.0):
            raise ValueError(f"r must be > 0, got {self.r}")
        if not (0.0 < self.theta < math.pi / 2):
            raise ValueError(f"theta must be in (0, pi/2), got {self.theta}")
        if not (0.0 <= self.eps_z < self.r):
            raise ValueError(f"eps_z must satisfy 0 <= eps_z < r, got {self.eps_z}")


@dataclass
class VgfStats:
    """Per-rule rejection tallies for one filter pass."""

    n_input: int
    n_kept: int
    n_rejected_overhead: int  # rule A: neighbor above the tolerance band
    n_rejected_steep: int     # rule B: lower neighbor too steep
    n_isolated: int           # kept with no neighbors at all

    @property
    def n_rejected(self) -> int:
        return self.n_input - self.n_kept


def vgf_mask(points: np.ndarray, tree, params: VgfParams):
    """Boolean keep-mask over ``points`` plus rejection stats.

    A point rejected by both rules counts toward the overhead tally
    (rule A is checked first, matching the brute-force oracle).
    """
    pts = check_points(points)
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=bool), VgfStats(0, 0, 0, 0, 0)

    pairs = tree.query_pairs(params.r, output_type="ndarray")
    # Each undirected pair is evaluated once and contributes to both
    # endpoints; negation keeps the arithmetic bit-identical to scanning
    # the two directions separately. Coincident points are excluded from
    # each other's neighborhoods, matching radius_neighbors.
    i, j = pairs[:, 0], pairs[:, 1]
    px, py, pz = (np.ascontiguousarray(pts[:, c]) for c in range(3))
    # millions of pairs: reuse buffers instead of allocating per-op
    dz = pz[j]
    np.subtract(dz, pz[i], out=dz)
    h2 = px[j]
    np.subtract(h2, px[i], out=h2)
    np.multiply(h2, h2, out=h2)
    dy = py[j]
    np.subtract(dy, py[i], out=dy)
    h2 += np.multiply(dy, dy, out=dy)
    del dy
    real = h2 > 0.0
    np.logical_or(real, dz != 0.0, out=real)
    if not real.all():
        i, j, dz, h2 = i[real], j[real], dz[real], h2[real]

    eps = params.eps_z
    # atan2(|dz|, horiz) >= theta squares to dz^2 >= tan(theta)^2 * horiz^2
    # on the lower branch, dodging both the transcendental and the sqrt
    span = np.multiply(h2, math.tan(params.theta) ** 2, out=h2)
    reject_a = np.zeros(n, dtype=bool)
    reject_a[i[dz > eps]] = True
    reject_a[j[-dz > eps]] = True
    steep = dz * dz >= span
    reject_b = np.zeros(n, dtype=bool)
    reject_b[i[(dz <= -eps) & steep]] = True
    reject_b[j[(dz >= eps) & steep]] = True
    has_neighbor = np.zeros(n, dtype=bool)
    has_neighbor[i] = True
    has_neighbor[j] = True

    keep = ~(reject_a | reject_b)
    stats = VgfStats(
        n_input=n,
        n_kept=int(keep.sum()),
        n_rejected_overhead=int(reject_a.sum()),
        n_rejected_steep=int((reject_b & ~reject_a).sum()),
        n_isolated=int((keep & ~has_neighbor).sum()),
    )
    return keep, stats


def valid_ground_filter(cloud: PointCloud, params: VgfParams) -> PointCloud:
    """Filter ``cloud`` down to standable points, preserving input order."""
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)))
    keep, _ = vgf_mask(cloud.points, cloud.tree, params)
    return PointCloud(cloud.points[keep])


class ValidGroundFilter(BaseEstimator, TransformerMixin):
    """Transformer that removes non-standable points from an (N, 3) array.

    Parameters
    ----------
    radius : float
        Clearance ball radius in meters; should exceed the smallest ball
        that wraps the robot.
    max_tilt : float
        Maximum standable surface tilt in radians.
    eps_z : float or None
        Vertical noise tolerance in meters. ``None`` picks twice the
        median point spacing of the data seen by ``transform``.
    """

    def __init__(self, radius=0.5, max_tilt=math.radians(35.0), eps_z=None):
        self.radius = radius
        self.max_tilt = max_tilt
        self.eps_z = eps_z

    def fit(self, X, y=None):
        check_points(X)
        self._resolve_params(X)
        return self

    def _resolve_params(self, X) -> VgfParams:
        eps = self.eps_z
        if eps is None:
            eps = min(2.0 * median_spacing(PointCloud(X)), 0.5 * self.radius)
        return VgfParams(r=self.radius, theta=self.max_tilt, eps_z=eps)

    def transform(self, X) -> np.ndarray:
        """Return the standable subset of ``X`` in input order."""
        pts = check_points(X)
        params = self._resolve_params(pts)
        cloud = PointCloud(pts)
        if len(cloud) == 0:
            self.stats_ = VgfStats(0, 0, 0, 0, 0)
            return pts
        keep, stats = vgf_mask(cloud.points, cloud.tree, params)
        self.stats_ = stats
        return pts[keep]
