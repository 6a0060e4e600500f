"""Local terrain pose estimation and the travel penalty field.

Each occupied voxel gets a local plane fit (RANSAC over nearby cloud
points); free voxels inherit the pose of the highest fitted voxel below
them in the same column, so a column above one surface carries exactly
one pose. The scalar penalty combines surface inclination with the
spatial variation of the pose, and a short-range diffusion step widens
it so narrow ridges cannot hide between voxel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cloud import PointCloud
from .errors import NoStandableError
from .gridmap import GridSpec, OccupancyGrid
from .interp import TrilinearField
from .validation import check_points

#: penalty assigned where no pose can be estimated
S_MAX = 1.0e6

_CHUNK = 32768


@dataclass(frozen=True)
class PoseParams:
    """Local plane fit configuration.

    neighbor_radius: cloud points within this distance of a voxel center
        participate in its fit (default matches the ground-filter
        clearance radius, i.e. the robot footprint).
    max_neighbors: cap on participating points (nearest first).
    iterations: RANSAC rounds; each samples one candidate triple.
    inlier_threshold: max point-to-plane distance for an inlier.
    min_points: fits whose consensus set is smaller are rejected.
    fill_holes: give columns that received no returns the pose of an
        adjacent fitted column when most of their neighbors have one;
        closes grid-sampling gaps without masking real voids.
    """

    neighbor_radius: float = 0.5
    max_neighbors: int = 12
    iterations: int = 100
    inlier_threshold: float = 0.05
    min_points: int = 10
    fill_holes: bool = True

    def __post_init__(self):
        if self.neighbor_radius <= 0:
            raise ValueError("neighbor_radius must be positive")
        if self.max_neighbors < 3 or self.min_points < 3:
            raise ValueError("need at least 3 points for a plane")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty assembly configuration.

    flat_weight scales squared inclination; variation_weight scales the
    square root of the pose Jacobian spectral norm. component_weights
    (center x, y, z, inclination) rescale pose components before the
    Jacobian is formed. diffusion_radius is the metric reach of the
    widening kernel; mode "max" takes the strongest weighted neighbor
    (never below the original value), "sum" is a plain convolution.
    """

    flat_weight: float = 1.0
    variation_weight: float = 1.0
    component_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    diffusion_radius: float = 0.3
    diffusion_mode: str = "max"

    def __post_init__(self):
        if self.flat_weight < 0 or self.variation_weight < 0:
            raise ValueError("weights must be non-negative")
        if len(self.component_weights) != 4:
            raise ValueError("component_weights must have 4 entries")
        if self.diffusion_radius < 0:
            raise ValueError("diffusion_radius must be non-negative")
        if self.diffusion_mode not in ("max", "sum"):
            raise ValueError(f"unknown diffusion_mode {self.diffusion_mode!r}")


class PoseField:
    """Per-voxel plane center, inclination, and validity."""

    def __init__(self, spec: GridSpec, center, incline, valid, n_fitted=0):
        self.spec = spec
        self.center = np.asarray(center, dtype=np.float64)
        self.incline = np.asarray(incline, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        if self.center.shape != spec.shape + (3,):
            raise ValueError("center array shape mismatch")
        if self.incline.shape != spec.shape or self.valid.shape != spec.shape:
            raise ValueError("incline/valid array shape mismatch")
        #: voxels whose pose came from their own plane fit
        self.n_fitted = int(n_fitted)


def fit_plane(points):
    """Least-squares plane; returns (centroid, unit normal with nz >= 0)."""
    pts = check_points(points, allow_empty=False, name="points")
    if len(pts) < 3:
        raise ValueError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    x = pts - centroid
    cov = x.T @ x
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    return centroid, normal


def fit_plane_ransac(points, params: PoseParams, rng):
    """Robust plane fit on one neighborhood.

    Returns:
        (centroid, unit normal, inlier mask). The final model is the
        least-squares plane of the best consensus set.

    Raises:
        ValueError: fewer than ``params.min_points`` points.
    """
    pts = check_points(points, allow_empty=False, name="points")
    n = len(pts)
    if n < params.min_points:
        raise ValueError(f"plane fit needs >= {params.min_points} points, got {n}")
    best_mask = None
    best_score = -1
    for _ in range(params.iterations):
        sel = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[sel]
        normal = np.cross(p1 - p0, p2 - p0)
        nn = np.linalg.norm(normal)
        if nn < 1e-12:
            continue
        dist = np.abs((pts - p0) @ (normal / nn))
        mask = dist < params.inlier_threshold
        score = int(mask.sum())
        if score > best_score:
            best_score = score
            best_mask = mask
    if best_mask is None or best_score < 3:
        raise ValueError("all sampled triples were degenerate")
    centroid, normal = fit_plane(pts[best_mask])
    return centroid, normal, best_mask


def _smallest_eigvec3(cov):
    """Batched smallest eigenpair of symmetric 3x3 matrices.

    Closed-form (trigonometric) eigenvalues, eigenvector from the
    largest cross product of rows of (cov - lam*I). Rows too close to
    isotropic for that construction fall back to LAPACK.

    Returns:
        (eigenvalues (n,), unit eigenvectors (n, 3)).
    """
    cov = np.asarray(cov, dtype=np.float64)
    n = len(cov)
    eye = np.eye(3)
    q = np.trace(cov, axis1=1, axis2=2) / 3.0
    b = cov - q[:, None, None] * eye
    p = np.sqrt(np.maximum(np.einsum("nij,nij->n", b, b) / 6.0, 0.0))
    scale = np.where(p > 0.0, p, 1.0)
    bs = b / scale[:, None, None]
    det = (bs[:, 0, 0] * (bs[:, 1, 1] * bs[:, 2, 2] - bs[:, 1, 2] * bs[:, 2, 1])
           - bs[:, 0, 1] * (bs[:, 1, 0] * bs[:, 2, 2] - bs[:, 1, 2] * bs[:, 2, 0])
           + bs[:, 0, 2] * (bs[:, 1, 0] * bs[:, 2, 1] - bs[:, 1, 1] * bs[:, 2, 0]))
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)

    a = cov - lam[:, None, None] * eye
    cand = np.stack([
        np.cross(a[:, 0], a[:, 1]),
        np.cross(a[:, 0], a[:, 2]),
        np.cross(a[:, 1], a[:, 2]),
    ], axis=1)
    norms = np.linalg.norm(cand, axis=2)
    best = np.argmax(norms, axis=1)
    rows = np.arange(n)
    vec = cand[rows, best]
    vn = norms[rows, best]
    # cross products collapse when lam is (nearly) repeated; those rows
    # get the exact solver
    bad = vn <= 1e-12 * np.maximum(np.einsum("nij,nij->n", a, a), 1e-300)
    good = ~bad
    vec[good] = vec[good] / vn[good, None]
    if bad.any():
        _, v = np.linalg.eigh(cov[bad])
        vec[bad] = v[:, :, 0]
    return lam, vec


def _sample_triples(rng, counts, rounds):
    """Uniform distinct index triples below counts (per row, counts >= 3).

    Returns shape (len(counts), rounds, 3).
    """
    c = counts[:, None]
    shape = (len(counts), rounds)
    r0 = rng.integers(0, c, size=shape)
    r1 = rng.integers(0, c - 1, size=shape)
    r1 += r1 >= r0
    r2 = rng.integers(0, c - 2, size=shape)
    lo = np.minimum(r0, r1)
    hi = np.maximum(r0, r1)
    r2 += r2 >= lo
    r2 += r2 >= hi
    return np.stack([r0, r1, r2], axis=2)


def _ls_plane_rows(neigh, w):
    """Row-wise weighted least-squares planes.

    neigh: (n, k, 3) point blocks, w: (n, k) boolean participation.
    Returns (centroid (n, 3), unit normal (n, 3)).

    The scatter matrix accumulates in single precision; centering
    happens in double first, so coplanar blocks still produce exact
    zeros in the out-of-plane rows.
    """
    n_pts = np.maximum(w.sum(axis=1), 1.0)
    centroid = np.einsum("vk,vkj->vj", w, neigh) / n_pts[:, None]
    x = (neigh - centroid[:, None, :]).astype(np.float32)
    x *= w[:, :, None]
    cov = np.einsum("vki,vkj->vij", x, x)
    _, normal = _smallest_eigvec3(cov)
    return centroid, normal


def _ransac_rows(neigh, have, counts, params, rng):
    """Blocked RANSAC over row-wise neighborhoods; returns best inlier masks.

    Candidate triples are drawn a block of rounds at a time so the
    inlier tests stay inside a few large vectorized calls. Scoring runs
    in single precision; it only picks which triple wins, the winning
    set is refit in double by the caller.
    """
    n_vox, k = have.shape
    counts_s = np.maximum(counts, 3)
    best_score = np.full(n_vox, -1, dtype=np.int64)
    best_inl = np.zeros((n_vox, k), dtype=bool)
    rows = np.arange(n_vox)
    neigh32 = neigh.astype(np.float32)
    done = 0
    while done < params.iterations:
        b = min(8, params.iterations - done)
        done += b
        tri = _sample_triples(rng, counts_s, b)
        p = neigh32[rows[:, None, None], tri]
        normal = np.cross(p[:, :, 1] - p[:, :, 0], p[:, :, 2] - p[:, :, 0])
        nn = np.linalg.norm(normal, axis=2)
        degenerate = nn < 1e-12
        normal = normal / np.where(degenerate, np.float32(1.0), nn)[..., None]
        d = (np.einsum("vkj,vbj->vbk", neigh32, normal)
             - np.einsum("vbj,vbj->vb", p[:, :, 0], normal)[:, :, None])
        inl = (np.abs(d) < params.inlier_threshold) & have[:, None, :]
        score = np.where(degenerate, -1, inl.sum(axis=2))
        bi = np.argmax(score, axis=1)
        sc = score[rows, bi]
        upd = sc > best_score
        best_score[upd] = sc[upd]
        best_inl[upd] = inl[rows, bi][upd]
    return best_inl, best_score


def _fit_chunk(centers, cloud, params, rng):
    """Consensus planes for a chunk of voxel centers at once.

    A direct least-squares prefit handles the common case: when every
    neighbor already sits within the inlier threshold of it, that plane
    carries the maximum possible consensus and no sampled triple can do
    better. Only the remaining rows pay for RANSAC.
    """
    n_vox = len(centers)
    k = min(params.max_neighbors, len(cloud))
    dist, idx = cloud.tree.query(
        centers, k=k, distance_upper_bound=params.neighbor_radius, workers=-1
    )
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    have = np.isfinite(dist)
    counts = have.sum(axis=1)
    # query pads misses with index == n; give them a real (ignored) point
    idx_safe = np.where(have, idx, 0)
    neigh = cloud.points[idx_safe]

    ok = counts >= params.min_points
    centroid, normal = _ls_plane_rows(neigh, have)
    d = np.einsum("vkj,vj->vk", neigh, normal)
    d -= np.einsum("vj,vj->v", centroid, normal)[:, None]
    clean = ((np.abs(d) < params.inlier_threshold) | ~have).all(axis=1)

    hard = np.flatnonzero(~clean & ok)
    if len(hard):
        inl, score = _ransac_rows(neigh[hard], have[hard], counts[hard],
                                  params, rng)
        good = score >= params.min_points
        c_h, n_h = _ls_plane_rows(neigh[hard], inl & good[:, None])
        centroid[hard] = c_h
        normal[hard] = n_h
        ok[hard] &= good

    incline = np.arccos(np.clip(np.abs(normal[:, 2]), 0.0, 1.0))
    # store the voxel center dropped onto the plane rather than the raw
    # centroid: identical plane, but immune to neighborhood-sampling
    # asymmetry, so the variation term sees geometry instead of noise
    off = np.einsum("vj,vj->v", centers - centroid, normal)
    anchor = centers - off[:, None] * normal
    return anchor, incline, ok


def _shift2(a: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out[x, y] = a[x - dx, y - dy], zero-filled at the borders."""
    out = np.zeros_like(a)
    nx, ny = a.shape
    xd = slice(max(dx, 0), nx + min(dx, 0))
    xs = slice(max(-dx, 0), nx + min(-dx, 0))
    yd = slice(max(dy, 0), ny + min(dy, 0))
    ys = slice(max(-dy, 0), ny + min(-dy, 0))
    out[xd, yd] = a[xs, ys]
    return out


_NEIGHBORS_8 = ((1, 0), (-1, 0), (0, 1), (0, -1),
                (1, 1), (1, -1), (-1, 1), (-1, -1))


def _fill_isolated_columns(center, incline, fitted, res, min_votes=5) -> int:
    """Adopt an adjacent column's top pose into unfitted columns.

    Only columns with at least min_votes of 8 fitted neighbors qualify,
    so isolated sampling gaps close while map borders and real voids
    keep their unknown status. Returns the number of columns filled.
    """
    supported = fitted.any(axis=2)
    nz = fitted.shape[2]
    top = nz - 1 - np.argmax(fitted[:, :, ::-1], axis=2)

    votes = np.zeros(supported.shape, dtype=np.int8)
    for dx, dy in _NEIGHBORS_8:
        votes += _shift2(supported.astype(np.int8), dx, dy)
    need = ~supported & (votes >= min_votes)
    filled = 0
    for dx, dy in _NEIGHBORS_8:
        if not need.any():
            break
        take = need & _shift2(supported, dx, dy)
        if not take.any():
            continue
        rx, ry = np.nonzero(take)
        sx, sy = rx - dx, ry - dy
        tz = top[sx, sy]
        fitted[rx, ry, tz] = True
        # translate the borrowed center into the receiving column so the
        # fill reads as a continuation of the donor surface
        shift = np.array([dx * res, dy * res, 0.0])
        center[rx, ry, tz] = center[sx, sy, tz] + shift
        incline[rx, ry, tz] = incline[sx, sy, tz]
        need[rx, ry] = False
        filled += len(rx)
    return filled


def build_pose_field(occ: OccupancyGrid, cloud: PointCloud,
                     params: PoseParams, rng) -> PoseField:
    """Fit a local plane per occupied voxel, then fill columns downward.

    Free voxels take the pose of the highest successfully fitted voxel
    below them; with nothing below they stay invalid and later receive
    the maximum penalty.
    """
    spec = occ.spec
    if len(cloud) == 0:
        raise ValueError("cannot build a pose field from an empty cloud")
    vox = np.argwhere(occ.occupied)
    centers = spec.index_to_center(vox)
    center = np.zeros(spec.shape + (3,))
    incline = np.zeros(spec.shape)
    fitted = np.zeros(spec.shape, dtype=bool)
    for lo in range(0, len(vox), _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        c, phi, ok = _fit_chunk(centers[sl], cloud, params, rng)
        ii = vox[sl]
        center[ii[:, 0], ii[:, 1], ii[:, 2]] = c
        incline[ii[:, 0], ii[:, 1], ii[:, 2]] = phi
        fitted[ii[:, 0], ii[:, 1], ii[:, 2]] = ok
    n_fitted = int(fitted.sum())
    if params.fill_holes:
        _fill_isolated_columns(center, incline, fitted, spec.resolution)

    # per column: index of the highest fitted voxel at or below each z
    nz = spec.dims[2]
    zidx = np.arange(nz)
    src = np.where(fitted, zidx[None, None, :], -1)
    src = np.maximum.accumulate(src, axis=2)
    valid = src >= 0
    gather = np.clip(src, 0, None)
    ix, iy = np.indices(spec.dims[:2])
    ix = ix[:, :, None]
    iy = iy[:, :, None]
    center = center[ix, iy, gather]
    incline = incline[ix, iy, gather]
    center[~valid] = 0.0
    incline[~valid] = 0.0
    return PoseField(spec, center, incline, valid, n_fitted=n_fitted)


def _pose_variation(pose: PoseField, weights) -> np.ndarray:
    """Spectral norm of the horizontal Jacobian of the weighted pose.

    The plane center rides along with the query column, so its nominal
    one-to-one horizontal motion is subtracted before differencing;
    what remains is genuine surface variation (flat ground scores zero,
    height jumps between columns survive in full).
    """
    spec = pose.spec
    w = np.asarray(weights, dtype=np.float64)
    gx = spec.origin[0] + (np.arange(spec.dims[0]) + 0.5) * spec.resolution
    gy = spec.origin[1] + (np.arange(spec.dims[1]) + 0.5) * spec.resolution
    res = spec.resolution
    # one component at a time in single precision: the Jacobian feeds a
    # penalty of order one, and the cast happens after the nominal-motion
    # subtraction so flat ground still differences to exactly zero
    a = np.zeros(spec.shape, dtype=np.float32)
    b = np.zeros(spec.shape, dtype=np.float32)
    c = np.zeros(spec.shape, dtype=np.float32)
    tmp = np.empty(spec.shape, dtype=np.float32)
    for comp in range(4):
        if comp < 3:
            g = pose.center[..., comp] * w[comp]
        else:
            g = pose.incline * w[3]
        if comp == 0:
            g -= w[0] * gx[:, None, None]
        elif comp == 1:
            g -= w[1] * gy[None, :, None]
        g = g.astype(np.float32)
        jx = np.gradient(g, res, axis=0) if spec.dims[0] > 1 else np.zeros_like(g)
        jy = np.gradient(g, res, axis=1) if spec.dims[1] > 1 else np.zeros_like(g)
        b += np.multiply(jx, jy, out=tmp)
        a += np.multiply(jx, jx, out=jx)
        c += np.multiply(jy, jy, out=jy)
    lam = 0.5 * ((a + c) + np.sqrt((a - c) ** 2 + 4.0 * b * b))
    return np.sqrt(np.maximum(lam, 0.0))


def _contaminated(valid: np.ndarray) -> np.ndarray:
    """Voxels whose difference stencil touches an invalid pose."""
    inv = ~valid
    out = inv.copy()
    for axis in (0, 1):
        if valid.shape[axis] < 2:
            continue
        lead = [slice(None)] * 3
        lag = [slice(None)] * 3
        lead[axis] = slice(1, None)
        lag[axis] = slice(None, -1)
        out[tuple(lag)] |= inv[tuple(lead)]
        out[tuple(lead)] |= inv[tuple(lag)]
    return out


def build_penalty(pose: PoseField, params: PenaltyParams) -> np.ndarray:
    """Raw travel penalty: inclination term plus pose variation term.

    Voxels without a pose, or whose finite-difference stencil touches
    one, are pinned at S_MAX.
    """
    sig = _pose_variation(pose, params.component_weights)
    s = params.flat_weight * pose.incline ** 2 + params.variation_weight * np.sqrt(sig)
    s[_contaminated(pose.valid)] = S_MAX
    return s


def diffusion_kernel(radius: float, resolution: float) -> np.ndarray:
    """Cone-shaped weights over a square window of odd size.

    The center weight is 1 and weights fall linearly to 0 at the metric
    ``radius``; a zero radius gives the identity 1x1 kernel.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0.0:
        return np.ones((1, 1))
    m = 2 * math.ceil(radius / resolution) + 1
    c = (m - 1) / 2.0
    i, j = np.indices((m, m)).astype(np.float64)
    r = resolution * np.hypot(i - c, j - c)
    return np.maximum(0.0, 1.0 - r / radius)


def diffuse(s: np.ndarray, radius: float, resolution: float,
            mode: str = "max") -> np.ndarray:
    """Spread the penalty horizontally with the cone kernel.

    In "max" mode each voxel takes the strongest weighted value in its
    window, so the result never drops below the input. "sum" mode is a
    plain zero-padded convolution. Cells beyond the grid contribute 0.
    """
    s = np.asarray(s, dtype=np.float64)
    kernel = diffusion_kernel(radius, resolution)
    m = kernel.shape[0]
    if m == 1:
        return s.copy()
    if mode == "sum":
        return ndimage.convolve(s, kernel[:, :, None], mode="constant", cval=0.0)
    if mode != "max":
        raise ValueError(f"unknown diffusion mode {mode!r}")
    # max over w * s == exp(max over log w + log s): one C-level grey
    # dilation instead of a python loop over kernel offsets
    footprint = (kernel > 0.0)[:, :, None]
    with np.errstate(divide="ignore"):
        structure = np.where(footprint, np.log(kernel)[:, :, None], -np.inf)
        out = ndimage.grey_dilation(
            np.log(s), footprint=footprint, structure=structure,
            mode="constant", cval=-np.inf,
        )
    out = np.exp(out)
    # the identity offset makes the dilation >= s; re-impose it exactly
    # since the log/exp round trip costs an ulp
    return np.maximum(out, s)


class PenaltyField:
    """Diffused travel penalty with continuous interpolation."""

    def __init__(self, spec: GridSpec, raw: np.ndarray, diffused: np.ndarray):
        raw = np.asarray(raw, dtype=np.float64)
        diffused = np.asarray(diffused, dtype=np.float64)
        if raw.shape != spec.shape or diffused.shape != spec.shape:
            raise ValueError("penalty array shape mismatch")
        self.spec = spec
        self.raw = raw
        self.values = diffused
        self._interp = TrilinearField(diffused, spec.origin_array, spec.resolution)

    def query(self, points):
        """Trilinear penalty and gradient at world points (N, 3)."""
        return self._interp.value_and_grad(points)


def build_penalty_field(occ: OccupancyGrid, pose: PoseField,
                        params: PenaltyParams) -> PenaltyField:
    raw = build_penalty(pose, params)
    diffused = diffuse(raw, params.diffusion_radius, occ.spec.resolution,
                       params.diffusion_mode)
    if not pose.valid.any():
        raise NoStandableError("no voxel received a pose estimate")
    return PenaltyField(occ.spec, raw, diffused)
