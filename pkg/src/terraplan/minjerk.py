"""Piecewise-quintic minimum-jerk trajectories.

A trajectory is parameterized by interior waypoints q and piece
durations T; the quintic coefficients are the unique solution of a
banded linear system enforcing full start/end states, waypoint
interpolation, and derivative continuity through order 4. The same
factorization drives the adjoint map that turns coefficient-space cost
gradients into waypoint/duration gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import get_lapack_funcs

from .validation import check_vector3

_N_COEF = 6
# lower/upper bandwidths of the constraint matrix in this row layout
_KL, _KU = 8, 7
#: d^3/dt^3 factors of t^3, t^4, t^5
_JERK_K = np.array([6.0, 24.0, 60.0])

# falling-factorial coefficients: _FALL[k, j] = j!/(j-k)! for j >= k
_FALL = np.zeros((_N_COEF, _N_COEF))
for _k in range(_N_COEF):
    for _j in range(_k, _N_COEF):
        _FALL[_k, _j] = np.prod(np.arange(_j - _k + 1, _j + 1, dtype=np.float64))
del _k, _j


def _power_table(ts) -> np.ndarray:
    """(n, 6) table of t^0..t^5 built by repeated multiplication."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    p = np.empty((len(ts), _N_COEF))
    p[:, 0] = 1.0
    for e in range(1, _N_COEF):
        np.multiply(p[:, e - 1], ts, out=p[:, e])
    return p


def basis_rows(ts, order: int) -> np.ndarray:
    """Rows of monomial-basis derivatives: d^order/dt^order [1..t^5]."""
    if order >= _N_COEF:
        return np.zeros((len(np.atleast_1d(ts)), _N_COEF))
    p = _power_table(ts)
    out = np.zeros((len(p), _N_COEF))
    out[:, order:] = _FALL[order, order:] * p[:, : _N_COEF - order]
    return out


def basis_row(t: float, order: int) -> np.ndarray:
    return basis_rows([t], order)[0]


def basis_matrix(ts) -> np.ndarray:
    """(n, 6, 6) stacked derivative bases; row k of each is basis_row(t, k)."""
    p = _power_table(ts)
    out = np.zeros((len(p), _N_COEF, _N_COEF))
    for k in range(_N_COEF):
        out[:, k, k:] = _FALL[k, k:] * p[:, : _N_COEF - k]
    return out


@dataclass(frozen=True)
class BoundaryState:
    """Full kinematic state pinned at a trajectory end."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", check_vector3(self.position, "position"))
        object.__setattr__(self, "velocity", check_vector3(self.velocity, "velocity"))
        object.__setattr__(
            self, "acceleration", check_vector3(self.acceleration, "acceleration")
        )

    @classmethod
    def at_rest(cls, position):
        z = np.zeros(3)
        return cls(np.asarray(position, dtype=np.float64), z.copy(), z.copy())

    def stacked(self) -> np.ndarray:
        return np.stack([self.position, self.velocity, self.acceleration])


@dataclass
class ConstraintPoints:
    """Per-sample kinematics at t = (j / kappa_i) * T_i, j < kappa_i.

    The goal endpoint is never sampled; basis rows are kept so penalty
    gradients can be pushed back into coefficient space cheaply.
    """

    piece: np.ndarray
    ratio: np.ndarray
    t_local: np.ndarray
    kappa: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    jerk: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __len__(self):
        return len(self.piece)


class MinJerkTrajectory:
    """Immutable piecewise quintic through q with durations T.

    Args:
        start, end: boundary states.
        q: (M-1, 3) interior waypoints (empty for M=1).
        T: (M,) positive durations.

    Raises:
        ValueError: bad shapes or non-positive durations.
        numpy.linalg.LinAlgError: singular constraint system.
    """

    def __init__(self, start: BoundaryState, end: BoundaryState, q, T):
        T = np.atleast_1d(np.asarray(T, dtype=np.float64))
        if T.ndim != 1 or len(T) < 1:
            raise ValueError("T must be a non-empty 1-D array")
        if not np.all(np.isfinite(T)) or np.any(T <= 0.0):
            raise ValueError("durations must be finite and positive")
        m = len(T)
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3) if np.size(q) else np.zeros((0, 3))
        if q.shape != (m - 1, 3):
            raise ValueError(f"need {m - 1} interior waypoints for {m} pieces, got {q.shape[0]}")
        if q.size and not np.all(np.isfinite(q)):
            raise ValueError("waypoints must be finite")
        self.start = start
        self.end = end
        self.q = q
        self.T = T
        self.n_pieces = m
        self.times = np.concatenate([[0.0], np.cumsum(T)])
        self._basis = basis_matrix(T)
        self._factorize()
        rhs = np.zeros((6 * m, 3))
        rhs[0:3] = start.stacked()
        rhs[3:6 * m - 3:6] = q
        rhs[6 * m - 3:] = end.stacked()
        self.coeffs = self._solve(rhs).reshape(m, 6, 3)
        for a in (self.q, self.T, self.times, self.coeffs):
            a.setflags(write=False)

    # ---- banded system -------------------------------------------------
    def _factorize(self):
        m = self.n_pieces
        n = 6 * m
        ab = np.zeros((2 * _KL + _KU + 1, n))
        diag = _KL + _KU  # ab[diag + r - c, c] holds entry (r, c)

        # start boundary: value/velocity/acceleration rows at t = 0
        rk = np.arange(3)
        ab[diag + rk - rk, rk] = _FALL[rk, rk]
        # junction block of piece i: interpolation row plus continuity
        # rows of order 0..4, all against piece i's basis at t = T_i ...
        if m > 1:
            bj = self._basis[:m - 1][:, [0, 0, 1, 2, 3, 4], :]
            rows = (3 + 6 * np.arange(m - 1))[:, None, None] + np.arange(6)[None, :, None]
            cols = (6 * np.arange(m - 1))[:, None, None] + np.arange(6)[None, None, :]
            rows, cols = np.broadcast_arrays(rows, cols)
            ab[diag + rows.ravel() - cols.ravel(), cols.ravel()] = bj.ravel()
            # ... minus piece i+1's basis at t = 0 (one entry per order)
            rc = (3 + 6 * np.arange(m - 1))[:, None] + 1 + np.arange(5)[None, :]
            cc = (6 + 6 * np.arange(m - 1))[:, None] + np.arange(5)[None, :]
            ab[diag + rc.ravel() - cc.ravel(), cc.ravel()] = -np.broadcast_to(
                _FALL[np.arange(5), np.arange(5)], rc.shape).ravel()
        # end boundary: first three derivative rows at t = T of the last piece
        re = n - 3 + rk
        ce = 6 * (m - 1) + np.arange(6)
        rows = re[:, None]
        cols = ce[None, :]
        ab[diag + (rows - cols).ravel(), np.broadcast_to(cols, (3, 6)).ravel()] = \
            self._basis[m - 1, :3, :].ravel()

        gbtrf, gbtrs = get_lapack_funcs(("gbtrf", "gbtrs"), (ab,))
        lu, ipiv, info = gbtrf(ab, _KL, _KU)
        if info != 0:
            raise LinAlgError(f"coefficient system is singular (info={info})")
        self._lu = lu
        self._ipiv = ipiv
        self._gbtrs = gbtrs

    def _solve(self, rhs, trans=0):
        x, info = self._gbtrs(self._lu, _KL, _KU, rhs, self._ipiv, trans=trans)
        if info != 0:
            raise LinAlgError(f"banded solve failed (info={info})")
        return x

    # ---- evaluation ----------------------------------------------------
    @property
    def total_time(self) -> float:
        return float(self.times[-1])

    def _locate(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        tol = 1e-9 * max(1.0, self.total_time)
        if ts.size and (ts.min() < -tol or ts.max() > self.total_time + tol):
            raise ValueError(
                f"time outside [0, {self.total_time}]: {ts[np.argmax(np.abs(ts))]}"
            )
        piece = np.clip(
            np.searchsorted(self.times, ts, side="right") - 1, 0, self.n_pieces - 1
        )
        return piece, ts - self.times[piece]

    def evaluate_many(self, ts, order: int = 0) -> np.ndarray:
        """Derivative of the given order at absolute times ts, (N, 3)."""
        piece, local = self._locate(ts)
        b = basis_rows(local, order)
        return np.einsum("nk,nkj->nj", b, self.coeffs[piece])

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        return self.evaluate_many([t], order)[0]

    def sample_constraint_points(self, kappa) -> ConstraintPoints:
        """Uniform in-time samples on each piece (endpoints excluded)."""
        m = self.n_pieces
        kappa = np.broadcast_to(np.asarray(kappa, dtype=np.intp), (m,)).copy()
        if np.any(kappa < 1):
            raise ValueError("kappa must be >= 1 per piece")
        piece = np.repeat(np.arange(m, dtype=np.intp), kappa)
        j = np.concatenate([np.arange(k) for k in kappa])
        ratio = j / kappa[piece]
        t_local = ratio * self.T[piece]
        b = [basis_rows(t_local, k) for k in range(4)]
        cp = self.coeffs[piece]
        vals = [np.einsum("nk,nkj->nj", bi, cp) for bi in b]
        return ConstraintPoints(
            piece=piece, ratio=ratio, t_local=t_local, kappa=kappa,
            pos=vals[0], vel=vals[1], acc=vals[2], jerk=vals[3],
            b0=b[0], b1=b[1], b2=b[2],
        )

    # ---- jerk energy ---------------------------------------------------
    def _jerk_quadratic(self):
        """(M, 3, 3) Gram matrices of the squared-jerk integral."""
        k = np.arange(3, 6)
        kk = k[:, None] + k[None, :] - 5
        w = _JERK_K[:, None] * _JERK_K[None, :] / kk
        return w[None, :, :] * self.T[:, None, None] ** kk[None, :, :]

    def jerk_energy(self) -> float:
        gram = self._jerk_quadratic()
        cj = self.coeffs[:, 3:, :]
        return float(np.einsum("mka,mkl,mla->", cj, gram, cj))

    def jerk_energy_gradient(self):
        """(dJ_dc (M,6,3), direct dJ_dT (M,)) of the squared-jerk integral."""
        gram = self._jerk_quadratic()
        cj = self.coeffs[:, 3:, :]
        djc = np.zeros_like(self.coeffs)
        djc[:, 3:, :] = 2.0 * np.einsum("mkl,mla->mka", gram, cj)
        jerk_end = np.einsum("mk,mkj->mj", basis_rows(self.T, 3), self.coeffs)
        djt = np.einsum("mj,mj->m", jerk_end, jerk_end)
        return djc, djt

    # ---- adjoint -------------------------------------------------------
    def propagate_gradient(self, dj_dc, dj_dt_direct):
        """Map coefficient/duration cost gradients to (q, T) space.

        Args:
            dj_dc: (M, 6, 3) gradient with respect to coefficients.
            dj_dt_direct: (M,) partials holding coefficients fixed.

        Returns:
            (dq (M-1, 3), dt (M,)): exact total derivatives.
        """
        m = self.n_pieces
        dj_dc = np.asarray(dj_dc, dtype=np.float64).reshape(m, 6, 3)
        dt = np.array(np.broadcast_to(dj_dt_direct, (m,)), dtype=np.float64)
        y = self._solve(dj_dc.reshape(6 * m, 3), trans=1)
        dq = y[3 + 6 * np.arange(m - 1, dtype=np.intp)].copy()
        # time-derivatives of each piece's endpoint state, orders 1..5
        deriv = np.einsum("mkj,mjc->mkc", self._basis[:, 1:, :], self.coeffs)
        if m > 1:
            z = y[3:6 * m - 3].reshape(m - 1, 6, 3)
            dt[:m - 1] -= np.einsum("mc,mc->m", z[:, 0], deriv[:m - 1, 0])
            dt[:m - 1] -= np.einsum("mkc,mkc->m", z[:, 1:6], deriv[:m - 1, :5])
        dt[m - 1] -= np.einsum("kc,kc->", y[6 * m - 3:], deriv[m - 1, :3])
        return dq, dt

    # ---- export --------------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "start": [v.tolist() for v in self.start.stacked()],
            "end": [v.tolist() for v in self.end.stacked()],
            "waypoints": self.q.tolist(),
            "durations": self.T.tolist(),
            "coefficients": self.coeffs.tolist(),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MinJerkTrajectory":
        doc = json.loads(text)
        start = BoundaryState(*[np.array(v) for v in doc["start"]])
        end = BoundaryState(*[np.array(v) for v in doc["end"]])
        return cls(start, end, np.array(doc["waypoints"]), np.array(doc["durations"]))

    def save_csv(self, path, dt: float = 0.02) -> None:
        """Sampled rows t, position, velocity, acceleration."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        ts = np.arange(0.0, self.total_time + 0.5 * dt, dt)
        ts[-1] = min(ts[-1], self.total_time)
        p = self.evaluate_many(ts, 0)
        v = self.evaluate_many(ts, 1)
        a = self.evaluate_many(ts, 2)
        with open(path, "w") as fh:
            fh.write("t,x,y,z,vx,vy,vz,ax,ay,az\n")
            for i, t in enumerate(ts):
                row = np.concatenate([[t], p[i], v[i], a[i]])
                fh.write(",".join(f"{v_:.17g}" for v_ in row) + "\n")


def solve_coefficients(start: BoundaryState, end: BoundaryState, q, T) -> np.ndarray:
    """Coefficient blocks (M, 6, 3) of the minimum-jerk quintic."""
    return MinJerkTrajectory(start, end, q, T).coeffs
