"""Axis-aligned voxelization, exact Euclidean distance fields, and queries.

The distance field is unsigned: occupied voxels carry 0 and the value
grows with distance to the nearest occupied voxel center. Distances are
measured between voxel centers; choose the resolution small against the
collision threshold so quantization stays inside the safety margin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .cloud import PointCloud
from .errors import NoObstacleError
from .interp import TrilinearField
from .validation import check_positive, check_vector3

FIELD_MAGIC = b"TPFIELD1"


@dataclass(frozen=True)
class GridSpec:
    """Grid origin (corner of voxel (0,0,0)), resolution (m), voxel counts."""

    origin: tuple
    resolution: float
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        check_positive(self.resolution, "resolution")
        if len(self.origin) != 3 or len(self.dims) != 3:
            raise ValueError("origin and dims must have length 3")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be >= 1 per axis, got {self.dims}")

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def shape(self) -> tuple:
        return self.dims

    def world_to_index(self, points) -> np.ndarray:
        """Voxel indices containing each point (may be out of bounds)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.floor((p - self.origin_array) / self.resolution).astype(np.intp)

    def index_to_center(self, idx) -> np.ndarray:
        i = np.atleast_2d(np.asarray(idx, dtype=np.float64))
        return self.origin_array + (i + 0.5) * self.resolution

    def in_bounds(self, idx) -> np.ndarray:
        i = np.atleast_2d(np.asarray(idx))
        return np.all((i >= 0) & (i < np.array(self.dims)), axis=1)

    @classmethod
    def from_bounds(cls, lo, hi, resolution, margin=0.0):
        """Smallest grid at ``resolution`` covering [lo - margin, hi + margin]."""
        lo = check_vector3(lo, "lo") - margin
        hi = check_vector3(hi, "hi") + margin
        dims = np.maximum(np.ceil((hi - lo) / resolution).astype(int), 1)
        return cls(origin=tuple(lo), resolution=float(resolution), dims=tuple(dims))


class OccupancyGrid:
    """Boolean occupancy per voxel."""

    def __init__(self, spec: GridSpec, occupied: np.ndarray):
        occupied = np.asarray(occupied, dtype=bool)
        if occupied.shape != spec.shape:
            raise ValueError(f"occupancy shape {occupied.shape} != spec dims {spec.dims}")
        self.spec = spec
        self.occupied = occupied
        self.occupied.setflags(write=False)
        #: points that fell outside the grid during rasterization
        self.n_dropped = 0

    @property
    def n_occupied(self) -> int:
        return int(self.occupied.sum())


def rasterize(cloud: PointCloud, spec: GridSpec) -> OccupancyGrid:
    """Mark every voxel containing at least one cloud point as occupied.

    Out-of-bounds points are dropped; the count lands on ``n_dropped``.
    """
    occ = np.zeros(spec.shape, dtype=bool)
    dropped = 0
    if len(cloud):
        idx = spec.world_to_index(cloud.points)
        ok = spec.in_bounds(idx)
        dropped = int((~ok).sum())
        idx = idx[ok]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    grid = OccupancyGrid(spec, occ)
    grid.n_dropped = dropped
    return grid


class EsdfField:
    """Unsigned distance to the nearest occupied voxel center, in meters."""

    def __init__(self, spec: GridSpec, dist: np.ndarray):
        dist = np.asarray(dist, dtype=np.float64)
        if dist.shape != spec.shape:
            raise ValueError("distance array shape mismatch")
        self.spec = spec
        self.dist = dist
        self.dist.setflags(write=False)
        self._interp = TrilinearField(dist, spec.origin_array, spec.resolution)

    def query(self, points):
        """Trilinear distance and its exact spatial gradient.

        Args:
            points: (N, 3) or (3,) world coordinates.

        Returns:
            (d (N,), grad (N, 3)). Raises FieldBoundsError outside the
            voxel-center hull. The gradient differentiates the
            interpolant, so it is piecewise constant per cell along each
            axis and jumps across cell faces.
        """
        return self._interp.value_and_grad(points)

    def query_one(self, point):
        d, g = self._interp.value_and_grad(np.asarray(point).reshape(1, 3))
        return float(d[0]), g[0]


def build_esdf(occ: OccupancyGrid) -> EsdfField:
    """Exact Euclidean distance transform of the occupancy grid.

    Raises:
        NoObstacleError: when no voxel is occupied (the field would be
        infinite everywhere).
    """
    if occ.n_occupied == 0:
        raise NoObstacleError("occupancy grid has no occupied voxel")
    dist = ndimage.distance_transform_edt(
        ~occ.occupied, sampling=occ.spec.resolution
    )
    return EsdfField(occ.spec, dist)


# --------------------------------------------------------------------------
# field dump format: 64-byte header + float64 payload, x varying fastest
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<8s3i3dd12x")
assert _HEADER.size == 64


def save_field(path, values: np.ndarray, spec: GridSpec) -> None:
    """Write a scalar voxel field as header + flat float64 payload."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != spec.shape:
        raise ValueError("field shape does not match spec")
    header = _HEADER.pack(FIELD_MAGIC, *spec.dims, *spec.origin, spec.resolution)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.ravel(order="F").tobytes())


def load_field(path):
    """Read a dumped field; returns (values, GridSpec)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated field header")
        magic, nx, ny, nz, ox, oy, oz, res = _HEADER.unpack(head)
        if magic != FIELD_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        payload = np.frombuffer(fh.read(), dtype=np.float64)
    if payload.size != nx * ny * nz:
        raise ValueError(f"{path}: payload has {payload.size} values, expected {nx*ny*nz}")
    values = payload.reshape((nx, ny, nz), order="F")
    return values, GridSpec(origin=(ox, oy, oz), resolution=res, dims=(nx, ny, nz))


def save_layer_csv(path, values: np.ndarray, spec: GridSpec, z_index: int) -> None:
    """Dump one horizontal layer as CSV (x, y, value) for plotting."""
    values = np.asarray(values)
    if not 0 <= z_index < spec.dims[2]:
        raise ValueError(f"layer {z_index} outside 0..{spec.dims[2] - 1}")
    nx, ny = spec.dims[0], spec.dims[1]
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = spec.index_to_center(
        np.column_stack([ix.ravel(), iy.ravel(), np.full(ix.size, z_index)])
    )
    layer = values[:, :, z_index].ravel()
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for (x, y, _), v in zip(centers, layer):
            fh.write(f"{x:.9g},{y:.9g},{v:.17g}\n")
