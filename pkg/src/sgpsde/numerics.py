"""Dense SPD linear algebra and a box-constrained quasi-Newton minimizer."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.optimize import minimize

from .errors import DecompositionError, NumericalError, UsageError


@dataclass(frozen=True)
class PsdFactor:
    """Lower Cholesky factor ``L`` with ``L @ L.T == M``."""

    lower: np.ndarray

    @property
    def n(self):
        return self.lower.shape[0]


def factor_psd(M, sym_rtol=1e-9):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError(f"expected a square matrix, got shape {M.shape}")
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > sym_rtol * scale:
        raise UsageError("matrix is not symmetric")
    if not np.all(np.isfinite(M)):
        raise DecompositionError("matrix has non-finite entries", pivot=None)
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1)
    if info < 0:
        raise NumericalError(f"dpotrf: illegal argument {-info}")
    return PsdFactor(L)


def solve_lower(factor, rhs):
    """``L^{-1} rhs``."""
    return solve_triangular(factor.lower, rhs, lower=True, check_finite=False)


def solve_psd(factor, rhs):
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != factor.n:
        raise UsageError(
            f"dimension mismatch: factor is {factor.n}x{factor.n}, rhs has {rhs.shape[0]} rows")
    y = solve_triangular(factor.lower, rhs, lower=True, check_finite=False)
    return solve_triangular(factor.lower, y, lower=True, trans="T", check_finite=False)


def logdet(factor):
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


@dataclass
class BoundedProblem:
    """Minimize ``objective(x) -> (value, gradient)`` inside a box.

    ``lower``/``upper`` may be ``None`` or contain ``-inf``/``inf`` for
    unbounded coordinates.
    """

    objective: Callable
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    max_iterations: int = 200
    gradient_tolerance: float = 1e-5
    memory: int = 10


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: list


def _box(problem, n):
    lo = np.full(n, -np.inf) if problem.lower is None else np.asarray(problem.lower, float)
    hi = np.full(n, np.inf) if problem.upper is None else np.asarray(problem.upper, float)
    return lo, hi


def projected_gradient(x, grad, lower, upper):
    """Gradient with components that push against an active bound removed."""
    pg = np.asarray(grad, dtype=float).copy()
    pg[(x <= lower) & (pg > 0)] = 0.0
    pg[(x >= upper) & (pg < 0)] = 0.0
    return pg


def minimize_bounded(problem, start):
    """Limited-memory BFGS with gradient projection (scipy's L-BFGS-B).

    The best finite evaluation is returned, so the result never exceeds the
    objective at the (clipped) start.  Non-finite evaluations during the line
    search are reported to the optimizer as a large penalty, which makes it
    backtrack.

    Returns
    -------
    MinimizeResult
        ``converged`` is set when the projected-gradient infinity norm is at
        most ``gradient_tolerance * max(1, |value|)``.
    """
    start = np.asarray(start, dtype=float)
    lo, hi = _box(problem, start.size)
    x0 = np.clip(start, lo, hi)
    f0, g0 = problem.objective(x0)
    g0 = np.asarray(g0, dtype=float)
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise NumericalError(f"objective is not finite at the starting point (value {f0})")

    best = {"x": x0.copy(), "f": float(f0), "g": g0.copy()}
    penalty = abs(f0) * 1e6 + 1e10
    last_grad = [g0]

    def fun(x):
        x = np.clip(x, lo, hi)
        f, g = problem.objective(x)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return penalty, -last_grad[0]
        last_grad[0] = g
        if f < best["f"]:
            best.update(x=x.copy(), f=float(f), g=g.copy())
        return float(f), g

    trace = [float(f0)]

    def small_gradient():
        pg = projected_gradient(best["x"], best["g"], lo, hi)
        tol = problem.gradient_tolerance * max(1.0, abs(best["f"]))
        return bool(np.max(np.abs(pg), initial=0.0) <= tol)

    def callback(*args, **kwargs):
        trace.append(best["f"])
        if small_gradient():
            raise StopIteration

    if problem.max_iterations <= 0:
        res_nit = 0
    else:
        bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))
        res = minimize(
            fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
            options={
                "maxiter": int(problem.max_iterations),
                "maxcor": int(problem.memory),
                "ftol": 1e-15,
                "gtol": 0.0,
                "maxls": 40,
            },
        )
        res_nit = int(res.nit)
    return MinimizeResult(best["x"], best["f"], res_nit, small_gradient(), trace)


def finite_diff_gradient(f, x, step=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite evaluation along coordinate {i}")
        g[i] = (fp - fm) / (2.0 * step)
    return g


def finite_diff_hessian(grad, x, step=1e-5):
    """Central differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        H[:, i] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2.0 * step)
    return 0.5 * (H + H.T)
