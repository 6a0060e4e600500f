"""Limited-memory quasi-Newton minimizer and the positive-duration map.

The line search enforces weak Wolfe conditions only: the clamped cubic
penalties are C2 but not smoother, and grid-interpolated fields kink at
voxel faces, so insisting on strong Wolfe brackets routinely fails
there. Accepted steps always satisfy sufficient decrease, which keeps
the iterate costs strictly decreasing.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError

_TAU_CLAMP = 20.0


@dataclass(frozen=True)
class SolverOptions:
    memory: int = 8
    max_iterations: int = 200
    grad_tolerance: float = 1.0e-5
    rel_cost_tolerance: float = 1.0e-9
    wolfe_decrease: float = 1.0e-4
    wolfe_curvature: float = 0.9
    max_line_trials: int = 50

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.grad_tolerance <= 0 or self.rel_cost_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.wolfe_decrease < self.wolfe_curvature < 1:
            raise ValueError("need 0 < decrease < curvature < 1")
        if self.max_iterations < 1 or self.max_line_trials < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class SolveTrace:
    """Per-iteration record of the accepted sequence."""

    costs: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    reason: str = ""
    n_evals: int = 0

    @property
    def n_iterations(self) -> int:
        return max(len(self.costs) - 1, 0)

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,cost,grad_norm,step\n")
            for i, (c, g, s) in enumerate(
                zip(self.costs, self.grad_norms, self.steps)
            ):
                fh.write(f"{i},{c:.17g},{g:.17g},{s:.17g}\n")


def _two_loop(grad, pairs):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _check_finite(val, grad, x):
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise SolverError("objective returned a non-finite value or gradient", x)


def minimize(f, x0, opts: SolverOptions | None = None):
    """Minimize f(x) -> (value, gradient) from x0.

    Returns:
        (x_best, SolveTrace). The trace reason is one of grad_tol,
        cost_tol, max_iter, line_search_fail; on line-search failure the
        best (lowest-cost) iterate seen is returned.

    Raises:
        SolverError: f produced a non-finite value or gradient.
    """
    opts = opts or SolverOptions()
    x = np.array(x0, dtype=np.float64).ravel()
    val, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    _check_finite(val, grad, x)
    trace = SolveTrace()
    trace.n_evals = 1
    trace.costs.append(float(val))
    trace.grad_norms.append(float(np.linalg.norm(grad, np.inf)))
    trace.steps.append(0.0)
    pairs = deque(maxlen=opts.memory)

    for it in range(opts.max_iterations):
        gnorm = np.linalg.norm(grad, np.inf)
        if gnorm <= opts.grad_tolerance:
            trace.reason = "grad_tol"
            return x, trace
        d = _two_loop(grad, pairs)
        slope = d @ grad
        if slope >= 0.0:
            pairs.clear()
            d = -grad
            slope = d @ grad
        # unit first guess, except on the very first iteration where the
        # gradient scale is the only information available
        alpha = 1.0 if pairs else min(1.0, 1.0 / max(gnorm, 1e-12))
        lo, hi = 0.0, np.inf
        accepted = None
        armijo_best = None
        for _ in range(opts.max_line_trials):
            xn = x + alpha * d
            vn, gn = f(xn)
            gn = np.asarray(gn, dtype=np.float64).ravel()
            trace.n_evals += 1
            _check_finite(vn, gn, xn)
            if vn > val + opts.wolfe_decrease * alpha * slope:
                hi = alpha
            elif gn @ d < opts.wolfe_curvature * slope:
                lo = alpha
                if armijo_best is None or vn < armijo_best[1]:
                    armijo_best = (alpha, vn, xn, gn)
            else:
                accepted = (alpha, vn, xn, gn)
                break
            alpha = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * alpha
        if accepted is None:
            accepted = armijo_best
        if accepted is None:
            trace.reason = "line_search_fail"
            return x, trace
        alpha, vn, xn, gn = accepted
        s = xn - x
        y = gn - grad
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        prev = val
        x, val, grad = xn, vn, gn
        trace.costs.append(float(val))
        trace.grad_norms.append(float(np.linalg.norm(grad, np.inf)))
        trace.steps.append(float(alpha))
        if abs(prev - val) <= opts.rel_cost_tolerance * max(1.0, abs(val)):
            trace.reason = "cost_tol"
            return x, trace
    trace.reason = "max_iter"
    return x, trace


def time_map(tau):
    """Durations T = exp(tau) with the exact diagonal Jacobian.

    tau is clamped to [-20, 20]; inside the clamp dT/dtau = T, at the
    clamp the map is flat so the Jacobian entry is 0.
    """
    tau = np.asarray(tau, dtype=np.float64)
    clipped = np.clip(tau, -_TAU_CLAMP, _TAU_CLAMP)
    t = np.exp(clipped)
    jac = np.where(np.abs(tau) < _TAU_CLAMP, t, 0.0)
    return t, jac


def inverse_time_map(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("durations must be positive")
    return np.log(t)
