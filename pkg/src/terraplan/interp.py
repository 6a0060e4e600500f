"""Trilinear / bilinear interpolation of gridded scalar fields.

Values interpolate between voxel centers and gradients are the exact
spatial derivative of the interpolated value, so finite differences of
``value`` reproduce ``grad`` to rounding error anywhere inside a cell.
Like the interpolant itself, the derivative is piecewise: it jumps
across cell faces. Axes with a single sample behave as constant.
"""

from __future__ import annotations

import numpy as np

from .errors import FieldBoundsError


class TrilinearField:
    """Interpolates a (nx, ny, nz) array of voxel-center samples."""

    def __init__(self, values: np.ndarray, origin, resolution: float):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("values must be a 3D array")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.resolution = float(resolution)
        self.dims = np.array(self.values.shape)
        # interpolatable region: between first and last voxel centers
        self.lo = self.origin + 0.5 * self.resolution
        self.hi = self.origin + (self.dims - 0.5) * self.resolution
        self._flat = self.values.ravel()
        nx, ny, nz = self.values.shape
        # stride 0 collapses the +1 corner onto the base cell for
        # single-sample axes (their weight is forced to zero anyway)
        self._strides = (
            ny * nz if nx > 1 else 0,
            nz if ny > 1 else 0,
            1 if nz > 1 else 0,
        )

    def _locate(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        u = (p - self.origin) / self.resolution - 0.5
        tol = 1e-9
        bad = np.any((u < -tol) | (u > self.dims - 1.0 + tol), axis=1)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise FieldBoundsError(p[k], self.lo, self.hi)
        u = np.clip(u, 0.0, self.dims - 1.0)
        i0 = np.maximum(np.minimum(u.astype(np.intp), self.dims - 2), 0)
        f = u - i0
        return i0, f

    def value_and_grad(self, points):
        """Interpolated values and exact interpolant gradients.

        Args:
            points: (N, 3) or (3,) world coordinates.

        Returns:
            (vals (N,), grads (N, 3)); raises FieldBoundsError outside
            the voxel-center hull.
        """
        i0, f = self._locate(points)
        sx, sy, sz = self._strides
        base = i0[:, 0] * (self.dims[1] * self.dims[2]) + i0[:, 1] * self.dims[2] + i0[:, 2]
        v = self._flat
        c000 = v[base]
        c001 = v[base + sz]
        c010 = v[base + sy]
        c011 = v[base + sy + sz]
        c100 = v[base + sx]
        c101 = v[base + sx + sz]
        c110 = v[base + sx + sy]
        c111 = v[base + sx + sy + sz]

        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        gx_ = 1.0 - fx
        gy_ = 1.0 - fy
        gz_ = 1.0 - fz
        # reduce along x first; remaining factors are bilinear in (y, z)
        a00 = gx_ * c000 + fx * c100
        a01 = gx_ * c001 + fx * c101
        a10 = gx_ * c010 + fx * c110
        a11 = gx_ * c011 + fx * c111
        d00 = c100 - c000
        d01 = c101 - c001
        d10 = c110 - c010
        d11 = c111 - c011

        b0 = gy_ * a00 + fy * a10
        b1 = gy_ * a01 + fy * a11
        vals = gz_ * b0 + fz * b1

        inv = 1.0 / self.resolution
        grads = np.empty((len(vals), 3))
        grads[:, 0] = (gz_ * (gy_ * d00 + fy * d10) + fz * (gy_ * d01 + fy * d11)) * inv
        grads[:, 1] = (gz_ * (a10 - a00) + fz * (a11 - a01)) * inv
        grads[:, 2] = (b1 - b0) * inv
        return vals, grads

    def value(self, points):
        return self.value_and_grad(points)[0]


class BilinearMap:
    """Interpolates a (nx, ny) array of column samples over (x, y)."""

    def __init__(self, values: np.ndarray, origin_xy, resolution: float):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2D array")
        self.origin = np.asarray(origin_xy, dtype=np.float64).reshape(2)
        self.resolution = float(resolution)
        self.dims = np.array(self.values.shape)
        self.lo = self.origin + 0.5 * self.resolution
        self.hi = self.origin + (self.dims - 0.5) * self.resolution
        self._flat = self.values.ravel()
        nx, ny = self.values.shape
        self._strides = (ny if nx > 1 else 0, 1 if ny > 1 else 0)

    def value_and_grad(self, xy):
        """Values and exact (d/dx, d/dy) at (N, 2) world coordinates."""
        p = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        u = (p - self.origin) / self.resolution - 0.5
        tol = 1e-9
        bad = np.any((u < -tol) | (u > self.dims - 1.0 + tol), axis=1)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise FieldBoundsError(
                (p[k, 0], p[k, 1], 0.0),
                (self.lo[0], self.lo[1], 0.0),
                (self.hi[0], self.hi[1], 0.0),
            )
        u = np.clip(u, 0.0, self.dims - 1.0)
        i0 = np.maximum(np.minimum(u.astype(np.intp), self.dims - 2), 0)
        f = u - i0
        sx, sy = self._strides
        base = i0[:, 0] * self.dims[1] + i0[:, 1]
        v = self._flat
        c00 = v[base]
        c01 = v[base + sy]
        c10 = v[base + sx]
        c11 = v[base + sx + sy]
        fx, fy = f[:, 0], f[:, 1]
        gx_ = 1.0 - fx
        gy_ = 1.0 - fy
        a0 = gx_ * c00 + fx * c10
        a1 = gx_ * c01 + fx * c11
        vals = gy_ * a0 + fy * a1
        inv = 1.0 / self.resolution
        grads = np.empty((len(vals), 2))
        grads[:, 0] = (gy_ * (c10 - c00) + fy * (c11 - c01)) * inv
        grads[:, 1] = (a1 - a0) * inv
        return vals, grads
