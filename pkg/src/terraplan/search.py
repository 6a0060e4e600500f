"""Grid path search over standable voxels.

The front end only needs a geometrically short, kinematically plausible
polyline; terrain cost shaping is left entirely to the trajectory
optimizer, so edge weights here are pure Euclidean step lengths.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import NoPathError, NoStandableError, SnapError
from .gridmap import GridSpec, rasterize
from .validation import check_vector3

#: start/goal must find a standable voxel within this many grid cells
SNAP_RADIUS_CELLS = 5.0

_HORIZONTAL = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class GridPath:
    """Voxel-center polyline from start to goal with its summed length."""

    indices: np.ndarray
    points: np.ndarray
    cost: float
    n_explored: int

    def __len__(self):
        return len(self.indices)


class SearchSpace:
    """Standable voxels plus the height-step limit between columns."""

    def __init__(self, spec: GridSpec, standable: np.ndarray, step_max: float):
        standable = np.asarray(standable, dtype=bool)
        if standable.shape != spec.shape:
            raise ValueError("standable mask shape mismatch")
        if step_max <= 0:
            raise ValueError("step_max must be positive")
        self.spec = spec
        self.standable = standable
        self.standable.setflags(write=False)
        self.step_max = float(step_max)
        self._indexed = False
        self._cells = None
        self._col_z = None
        self._col_start = None
        self._col_count = None

    @property
    def n_standable(self) -> int:
        return int(self.standable.sum())

    def _ensure_index(self):
        if self._indexed:
            return
        nx, ny, _ = self.spec.dims
        cells = np.argwhere(self.standable)
        # argwhere emits ascending lexicographic order, so each column's
        # z indices land sorted and contiguous; plain int lists keep the
        # search inner loop free of per-element numpy boxing
        flat_xy = cells[:, 0] * ny + cells[:, 1]
        counts = np.bincount(flat_xy, minlength=nx * ny)
        starts = np.zeros(nx * ny, dtype=np.intp)
        np.cumsum(counts[:-1], out=starts[1:])
        self._cells = cells
        self._col_z = cells[:, 2].tolist()
        self._col_start = starts.tolist()
        self._col_count = counts.tolist()
        self._indexed = True

    def column(self, x: int, y: int):
        """Sorted standable z indices of column (x, y), or None."""
        self._ensure_index()
        f = x * self.spec.dims[1] + y
        n = self._col_count[f]
        if not n:
            return None
        s = self._col_start[f]
        return np.array(self._col_z[s:s + n], dtype=np.intp)

    def snap(self, point) -> tuple:
        """Nearest standable voxel index within the snap radius.

        Raises:
            SnapError: nothing standable close enough; carries the
            nearest standable center for diagnostics.
        """
        p = check_vector3(point, "point")
        radius = SNAP_RADIUS_CELLS * self.spec.resolution
        # any center within the radius sits at most this many cells away
        reach = int(SNAP_RADIUS_CELLS) + 1
        anchor = self.spec.world_to_index(p.reshape(1, 3))[0]
        lo = np.maximum(anchor - reach, 0)
        hi = np.minimum(anchor + reach + 1, self.spec.dims)
        if np.all(lo < hi):
            sub = self.standable[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
            cand = np.argwhere(sub)
            if len(cand):
                cand += lo
                diff = self.spec.index_to_center(cand) - p
                d2 = np.einsum("ij,ij->i", diff, diff)
                k = int(np.argmin(d2))
                if d2[k] <= radius * radius:
                    return tuple(int(v) for v in cand[k])
        # nothing close enough: report the globally nearest center
        cells = np.argwhere(self.standable)
        diff = self.spec.index_to_center(cells) - p
        d2 = np.einsum("ij,ij->i", diff, diff)
        k = int(np.argmin(d2))
        raise SnapError(p, self.spec.index_to_center(cells[k:k + 1])[0], radius)


def build_search_space(valid_cloud: PointCloud, spec: GridSpec,
                       step_max: float | None = None,
                       h_clear: int = 1,
                       pose_valid: np.ndarray | None = None) -> SearchSpace:
    """Mark voxels holding ground-filtered points, padded h_clear up.

    The upward padding tolerates surface points that rasterize just
    below a voxel boundary. Voxels without a valid pose estimate carry
    the lethal penalty value, so when ``pose_valid`` is given they are
    removed outright rather than left for the optimizer to escape.

    Raises:
        NoStandableError: no cloud point fell inside the grid.
    """
    if step_max is None:
        step_max = 2.0 * spec.resolution
    if h_clear < 0:
        raise ValueError("h_clear must be non-negative")
    surf = rasterize(valid_cloud, spec).occupied
    standable = surf.copy()
    for k in range(1, h_clear + 1):
        standable[:, :, k:] |= surf[:, :, :-k]
    if pose_valid is not None:
        standable &= pose_valid
    if not standable.any():
        raise NoStandableError("no standable voxel inside the grid")
    return SearchSpace(spec, standable, step_max)


def astar(space: SearchSpace, start, goal) -> GridPath:
    """Shortest standable path by Euclidean step length.

    Start and goal snap to the nearest standable voxel. Moves go to the
    8 horizontal neighbor columns, landing on any standable voxel whose
    height differs by at most step_max. The heuristic combines the 2D
    octile distance with the vertical offset; per unit move it equals
    the step cost exactly, so it is consistent (and dominates the plain
    straight-line bound). Ties resolve by smaller heuristic, then
    lexicographic voxel index.

    Raises:
        SnapError: start or goal too far from standable terrain.
        NoPathError: goal unreachable; carries the explored-cell count.
    """
    s_idx = space.snap(start)
    g_idx = space.snap(goal)
    spec = space.spec
    res = spec.resolution
    nx, ny, nz = spec.dims
    dz_cells = int(np.floor(space.step_max / res + 1e-9))

    def centers_of(idx_arr):
        return spec.index_to_center(np.asarray(idx_arr))

    if s_idx == g_idx:
        pt = centers_of([s_idx])
        return GridPath(np.array([s_idx], dtype=np.intp), pt, 0.0, 1)

    # nodes travel the heap as flat indices: same lexicographic tie
    # order as (x, y, z) tuples, far cheaper to hash and compare
    space._ensure_index()
    col_z = space._col_z
    col_start = space._col_start
    col_count = space._col_count
    sqrt = math.sqrt
    gx, gy, gz = g_idx
    s_flat = (s_idx[0] * ny + s_idx[1]) * nz + s_idx[2]
    g_flat = (gx * ny + gy) * nz + gz
    steps = {(dx, dy, dz): res * sqrt(dx * dx + dy * dy + dz * dz)
             for dx, dy in _HORIZONTAL
             for dz in range(-dz_cells, dz_cells + 1)}

    # heuristic: per unit move the free-space cost is sqrt(h^2 + dz^2)
    # with h the 2D octile step, so sqrt(octile^2 + dz^2) never
    # overestimates; the downscale keeps rounding on the admissible side
    hscale = res * (1.0 - 1e-12)
    sqrt2m1 = math.sqrt(2.0) - 1.0

    def heur(x, y, z):
        ax = x - gx if x >= gx else gx - x
        ay = y - gy if y >= gy else gy - y
        oct2 = ax + sqrt2m1 * ay if ax >= ay else ay + sqrt2m1 * ax
        dz = z - gz
        return hscale * sqrt(oct2 * oct2 + dz * dz)

    g_score = np.full(nx * ny * nz, np.inf)
    closed = np.zeros(nx * ny * nz, dtype=bool)
    parent = {}
    g_score[s_flat] = 0.0
    h0 = heur(*s_idx)
    open_heap = [(h0, h0, s_flat)]
    push = heapq.heappush
    pop = heapq.heappop
    n_explored = 0
    while open_heap:
        f, h, cur = pop(open_heap)
        if closed[cur]:
            continue
        closed[cur] = True
        n_explored += 1
        if cur == g_flat:
            chain = [cur]
            while chain[-1] in parent:
                chain.append(parent[chain[-1]])
            chain.reverse()
            flat = np.array(chain, dtype=np.intp)
            idx = np.stack([flat // (ny * nz), (flat // nz) % ny, flat % nz], axis=1)
            # canonical cost: the exactly rounded sum over the step
            # multiset, independent of discovery order
            cost = math.fsum(
                steps[(int(b[0] - a[0]), int(b[1] - a[1]), int(b[2] - a[2]))]
                for a, b in zip(idx[:-1], idx[1:])
            )
            return GridPath(idx, centers_of(idx), cost, n_explored)
        cz = cur % nz
        cxy = cur // nz
        cy = cxy % ny
        cx = cxy // ny
        g_cur = float(g_score[cur])
        z_lo = cz - dz_cells
        z_hi = cz + dz_cells
        for dx, dy in _HORIZONTAL:
            x, y = cx + dx, cy + dy
            if not (0 <= x < nx and 0 <= y < ny):
                continue
            fxy = x * ny + y
            cnt = col_count[fxy]
            if not cnt:
                continue
            st = col_start[fxy]
            base = fxy * nz
            for k in range(st, st + cnt):
                z = col_z[k]
                if z < z_lo:
                    continue
                if z > z_hi:
                    break
                nxt = base + z
                if closed[nxt]:
                    continue
                cand = g_cur + steps[(dx, dy, z - cz)]
                if cand < g_score[nxt]:
                    g_score[nxt] = cand
                    parent[nxt] = cur
                    hn = heur(x, y, z)
                    push(open_heap, (cand + hn, hn, nxt))
    raise NoPathError(n_explored)


def save_path_csv(path, grid_path: GridPath) -> None:
    """One waypoint per row: x,y,z voxel centers along the path."""
    with open(path, "w") as fh:
        fh.write("x,y,z\n")
        for p in grid_path.points:
            fh.write(f"{p[0]:.17g},{p[1]:.17g},{p[2]:.17g}\n")
