"""Lagrangian, augmented Lagrangian, KKT residuals and the Lyapunov function."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .problem import as_blocks, constraint_residuals

__all__ = [
    "KktResidual",
    "as_positive",
    "lagrangian_value",
    "augmented_lagrangian_value",
    "augmented_lagrangian_completed",
    "aug_lagrangian_block_gradient",
    "lagrangian_gradient",
    "kkt_residual",
    "lyapunov_value",
]


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    feasibility: float


def as_positive(values, count, name):
    """Broadcast a scalar or sequence to ``count`` strictly positive floats."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(count, float(arr))
    if arr.shape != (count,):
        raise DimensionError(f"{name} has {arr.size} entries, expected {count}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        bad = int(np.flatnonzero(~(arr > 0) | ~np.isfinite(arr))[0])
        raise ParameterError(f"{name}[{bad}] = {float(arr[bad])!r} must be positive and finite")
    return arr


def _duals(problem, lam):
    return as_blocks(lam, problem.n, problem.d, name="dual variables")


def lagrangian_value(problem, x, lam):
    """``sum f_i(x_i) + sum <lambda_j, r_j(x)>``."""
    x = as_blocks(x, problem.n + 1, problem.d)
    lam = _duals(problem, lam)
    r = constraint_residuals(problem, x)
    obj = sum(t.value(x[i]) for i, t in enumerate(problem.terms))
    return float(obj + np.sum(lam * r))


def augmented_lagrangian_value(problem, x, lam, rho):
    """``sum f_i + sum_j <lambda_j, r_j> + rho_j/2 ||r_j||^2``."""
    x = as_blocks(x, problem.n + 1, problem.d)
    lam = _duals(problem, lam)
    rho = as_positive(rho, problem.n, "rho")
    r = constraint_residuals(problem, x)
    obj = sum(t.value(x[i]) for i, t in enumerate(problem.terms))
    return float(obj + np.sum(lam * r) + 0.5 * np.sum(rho * np.sum(r * r, axis=1)))


def augmented_lagrangian_completed(problem, x, lam, rho):
    """Completed-square form: ``rho_j/2 ||r_j + lambda_j/rho_j||^2 - ||lambda_j||^2/(2 rho_j)``."""
    x = as_blocks(x, problem.n + 1, problem.d)
    lam = _duals(problem, lam)
    rho = as_positive(rho, problem.n, "rho")
    r = constraint_residuals(problem, x)
    obj = sum(t.value(x[i]) for i, t in enumerate(problem.terms))
    shifted = r + lam / rho[:, None]
    return float(obj + np.sum(0.5 * rho * np.sum(shifted * shifted, axis=1))
                 - np.sum(np.sum(lam * lam, axis=1) / (2.0 * rho)))


def _block_gradient(problem, x, lam, rho, i, r=None):
    # rho may be None (plain Lagrangian)
    n = problem.n
    g = np.array(problem.terms[i].grad(x[i]), dtype=float)
    if i >= 1:
        j = i - 1
        rj = problem.residual(j, x[j], x[i]) if r is None else r[j]
        w = lam[j] if rho is None else lam[j] + rho[j] * rj
        g += problem.lhs_tvp(j, x[i], w)
    if i <= n - 1:
        ri = problem.residual(i, x[i], x[i + 1]) if r is None else r[i]
        w = lam[i] if rho is None else lam[i] + rho[i] * ri
        g -= problem.rhs_tvp(i, x[i], w)
    return g


def aug_lagrangian_block_gradient(problem, x, lam, rho, i):
    """Gradient of the augmented Lagrangian with respect to block ``x_i``."""
    if not 0 <= i <= problem.n:
        raise IndexError(f"block index {i} outside 0..{problem.n}")
    x = as_blocks(x, problem.n + 1, problem.d)
    lam = _duals(problem, lam)
    rho = as_positive(rho, problem.n, "rho")
    return _block_gradient(problem, x, lam, rho, i)


def lagrangian_gradient(problem, x, lam, r=None):
    """``(n + 1, d)`` gradient of the penalty-free Lagrangian."""
    x = as_blocks(x, problem.n + 1, problem.d)
    lam = _duals(problem, lam)
    if r is None:
        r = constraint_residuals(problem, x)
    return np.array([_block_gradient(problem, x, lam, None, i, r) for i in range(problem.n + 1)])


def kkt_residual(problem, x, lam):
    """Infinity-norm stationarity of the Lagrangian and constraint violation."""
    x = as_blocks(x, problem.n + 1, problem.d)
    r = constraint_residuals(problem, x)
    g = lagrangian_gradient(problem, x, lam, r)
    feas = float(np.max(np.abs(r))) if r.size else 0.0
    return KktResidual(float(np.max(np.abs(g))), feas)


def lyapunov_value(problem, x_now, x_prev, lam, rho, eta):
    """``L_rho(x_now, lambda) + sum_i ||x_now_i - x_prev_i||^2 / (4 eta_i)``."""
    x_now = as_blocks(x_now, problem.n + 1, problem.d)
    x_prev = as_blocks(x_prev, problem.n + 1, problem.d)
    eta = as_positive(eta, problem.n + 1, "eta")
    dx = x_now - x_prev
    return augmented_lagrangian_value(problem, x_now, lam, rho) + float(
        np.sum(np.sum(dx * dx, axis=1) / (4.0 * eta)))
