"""Point-cloud container, spatial queries, and ASCII file I/O.

Supported formats are the ASCII variants of PCD and PLY plus a plain
``x y z`` / ``x,y,z`` text format (``xyz``). Coordinates are kept in
float64 and written back with full precision, so a save/load round trip
reproduces them bit for bit.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import CloudFormatError
from .validation import check_points, check_positive, check_vector3

log = logging.getLogger(__name__)

FORMATS = ("pcd", "ply", "xyz")


class PointCloud:
    """Immutable set of 3D points with a KD-tree index for radius queries.

    ``z`` is gravity-aligned "up". The point array is copied on
    construction and marked read-only; concurrent queries are safe.
    """

    def __init__(self, points):
        pts = check_points(points)
        pts = pts.copy()
        pts.setflags(write=False)
        self._points = pts
        self._tree = cKDTree(pts) if len(pts) else None
        #: rows discarded by the loader for being non-finite (0 for
        #: programmatically built clouds)
        self.dropped_nonfinite = 0

    @property
    def points(self) -> np.ndarray:
        """(N, 3) read-only float64 array."""
        return self._points

    @property
    def tree(self) -> cKDTree | None:
        return self._tree

    def __len__(self):
        return len(self._points)

    def __repr__(self):
        return f"PointCloud({len(self)} points)"

    def bounds(self):
        """(min_xyz, max_xyz) of the cloud; raises on an empty cloud."""
        if len(self) == 0:
            raise ValueError("empty cloud has no bounds")
        return self._points.min(axis=0), self._points.max(axis=0)

    def radius_neighbors(self, center, r) -> np.ndarray:
        """Points q with 0 < ||q - center|| <= r, as an (K, 3) array.

        The boundary is inclusive and a cloud member identical to
        ``center`` is excluded from its own neighborhood. Order follows
        point index order.
        """
        idx = self.radius_neighbor_indices(center, r)
        return self._points[idx]

    def radius_neighbor_indices(self, center, r) -> np.ndarray:
        center = check_vector3(center, "center")
        r = check_positive(r, "r")
        if self._tree is None:
            return np.empty(0, dtype=np.intp)
        idx = np.asarray(
            sorted(self._tree.query_ball_point(center, r)), dtype=np.intp
        )
        if len(idx):
            d2 = np.sum((self._points[idx] - center) ** 2, axis=1)
            idx = idx[d2 > 0.0]
        return idx

    def nearest(self, center, k=1):
        """k nearest neighbors of ``center`` (distances, indices)."""
        if self._tree is None:
            raise ValueError("empty cloud has no neighbors")
        return self._tree.query(check_vector3(center, "center"), k=k)


def median_spacing(cloud: PointCloud) -> float:
    """Median nearest-neighbor distance; 0.0 for clouds of < 2 points."""
    if len(cloud) < 2:
        return 0.0
    d, _ = cloud.tree.query(cloud.points, k=2)
    return float(np.median(d[:, 1]))


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

_SEP = re.compile(r"[,\s]+")


def _fmt_row(p):
    return f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}"


def _parse_rows(lines, n_expected, cols, n_cols, path):
    """Parse numeric rows; returns (points, n_dropped_nonfinite)."""
    pts = []
    dropped = 0
    taken = 0
    for lineno, raw in lines:
        text = raw.strip()
        if not text:
            continue
        fields = _SEP.split(text)
        if len(fields) < n_cols:
            raise CloudFormatError(
                f"expected {n_cols} fields, got {len(fields)}", path, lineno
            )
        try:
            xyz = [float(fields[c]) for c in cols]
        except ValueError as exc:
            raise CloudFormatError(f"non-numeric field in {text!r}", path, lineno) from exc
        taken += 1
        if all(np.isfinite(v) for v in xyz):
            pts.append(xyz)
        else:
            dropped += 1
        if n_expected is not None and taken >= n_expected:
            break
    if n_expected is not None and taken < n_expected:
        raise CloudFormatError(
            f"file ends after {taken} of {n_expected} declared points", path
        )
    arr = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    return arr, dropped


def _load_pcd(lines, path):
    fields = None
    n_points = None
    data_start = None
    types = None
    for i, (lineno, raw) in enumerate(lines):
        text = raw.strip()
        if text.startswith("#") or not text:
            continue
        key, _, rest = text.partition(" ")
        key = key.upper()
        if key == "FIELDS":
            fields = rest.split()
        elif key == "TYPE":
            types = rest.split()
        elif key == "POINTS":
            try:
                n_points = int(rest.split()[0])
            except (ValueError, IndexError):
                raise CloudFormatError("malformed POINTS header", path, lineno)
        elif key == "DATA":
            if rest.split()[0].lower() != "ascii":
                raise CloudFormatError(
                    f"unsupported PCD data mode {rest!r} (only ascii)", path, lineno
                )
            data_start = i + 1
            break
    if fields is None or data_start is None:
        raise CloudFormatError("missing FIELDS or DATA header", path)
    try:
        cols = tuple(fields.index(a) for a in ("x", "y", "z"))
    except ValueError:
        raise CloudFormatError(f"PCD fields {fields} lack x/y/z", path)
    if types is not None:
        for c in cols:
            if c < len(types) and types[c].upper() not in ("F", "D"):
                raise CloudFormatError(
                    f"x/y/z must be float typed, got TYPE {types}", path
                )
    return _parse_rows(lines[data_start:], n_points, cols, len(fields), path)


def _load_ply(lines, path):
    if not lines or lines[0][1].strip().lower() != "ply":
        raise CloudFormatError("not a PLY file (missing 'ply' magic)", path,
                               lines[0][0] if lines else None)
    n_vertex = None
    props = []
    in_vertex = False
    data_start = None
    leading_elements = []  # (name, count) before the vertex element
    seen_vertex = False
    for i, (lineno, raw) in enumerate(lines[1:], start=1):
        text = raw.strip()
        if not text or text.startswith("comment"):
            continue
        parts = text.split()
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise CloudFormatError(
                    f"unsupported PLY format {parts[1]!r} (only ascii)", path, lineno
                )
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                seen_vertex = True
                try:
                    n_vertex = int(parts[2])
                except (ValueError, IndexError):
                    raise CloudFormatError("malformed vertex element", path, lineno)
            elif not seen_vertex:
                leading_elements.append(int(parts[2]))
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            data_start = i + 1
            break
    if n_vertex is None or data_start is None:
        raise CloudFormatError("missing vertex element or end_header", path)
    try:
        cols = tuple(props.index(a) for a in ("x", "y", "z"))
    except ValueError:
        raise CloudFormatError(f"PLY vertex properties {props} lack x/y/z", path)
    skip = sum(leading_elements)
    return _parse_rows(lines[data_start + skip:], n_vertex, cols, len(props), path)


def load_cloud(path, format=None) -> PointCloud:
    """Load a point cloud from ``path``.

    Args:
        path: file to read.
        format: "pcd", "ply", or "xyz"; inferred from the suffix when None.

    Returns:
        PointCloud with all-finite points. Rows with NaN/inf coordinates
        are dropped; the count is logged and stored on
        ``cloud.dropped_nonfinite``.

    Raises:
        CloudFormatError: malformed headers or non-numeric fields (with
            line number), or an undeclared format.
        OSError: unreadable path.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise CloudFormatError(f"unknown cloud format {fmt!r}", path)
    with open(path, "r") as fh:
        lines = list(enumerate(fh.readlines(), start=1))
    if fmt == "pcd":
        pts, dropped = _load_pcd(lines, path)
    elif fmt == "ply":
        pts, dropped = _load_ply(lines, path)
    else:
        rows = [(n, ln) for n, ln in lines if not ln.lstrip().startswith("#")]
        pts, dropped = _parse_rows(rows, None, (0, 1, 2), 3, path)
    if dropped:
        log.warning("dropped %d non-finite rows while loading %s", dropped, path)
    cloud = PointCloud(pts)
    cloud.dropped_nonfinite = dropped
    return cloud


def save_cloud(cloud: PointCloud, path, format=None) -> None:
    """Write ``cloud`` to ``path`` in the requested ASCII format."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise CloudFormatError(f"unknown cloud format {fmt!r}", path)
    pts = cloud.points
    n = len(pts)
    with open(path, "w") as fh:
        if fmt == "pcd":
            fh.write(
                "# .PCD v0.7 - Point Cloud Data file format\n"
                "VERSION 0.7\nFIELDS x y z\nSIZE 8 8 8\nTYPE F F F\n"
                "COUNT 1 1 1\n"
                f"WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\n"
                f"POINTS {n}\nDATA ascii\n"
            )
        elif fmt == "ply":
            fh.write(
                "ply\nformat ascii 1.0\n"
                f"element vertex {n}\n"
                "property double x\nproperty double y\nproperty double z\n"
                "end_header\n"
            )
        for p in pts:
            fh.write(_fmt_row(p) + "\n")
