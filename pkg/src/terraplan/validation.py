"""Input validation helpers shared by the estimator-facing API."""

from __future__ import annotations

import numpy as np


def check_points(X, *, allow_empty=True, name="X") -> np.ndarray:
    """Coerce ``X`` to a contiguous (N, 3) float64 array of finite points."""
    pts = np.asarray(X, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n_points, 3), got {pts.shape}")
    if not allow_empty and pts.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one point")
    if pts.size and not np.all(np.isfinite(pts)):
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise ValueError(f"{name} contains a non-finite point at row {bad}")
    return np.ascontiguousarray(pts)


def check_vector3(v, name="point") -> np.ndarray:
    """Coerce to a finite 3-vector."""
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(v)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise ValueError(f"{name} must be a nonnegative finite number, got {value!r}")
    return value
