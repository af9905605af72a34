"""Inner minimizers for the ADMM block subproblems.

Every solver honours the descent contract: the returned value never exceeds
the value at the warm start.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.optimize

from .banded import SymBanded
from .errors import ConfigurationError

__all__ = [
    "SubproblemSpec",
    "SubsolveReport",
    "levenberg_marquardt",
    "descent_fallback",
    "nelder_mead",
    "SOLVERS",
]

NELDER_MEAD_MAX_DIM = 16
ROUNDOFF = 1e-15


@dataclass
class SubproblemSpec:
    """A smooth minimization problem over ``R^d``.

    ``tol`` bounds the final gradient norm; with ``relative_tol`` the bound
    is ``tol * (1 + ||grad(x0)||)``.  ``normal_system`` optionally returns
    ``(value, J^T r, J^T J)`` directly, skipping the stacked residual.
    """

    x0: np.ndarray
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    residual: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    normal_system: Optional[Callable] = None
    tol: float = 1e-8
    relative_tol: bool = False
    max_iter: int = 100

    @property
    def d(self):
        return self.x0.shape[0]

    @property
    def has_least_squares(self):
        return self.normal_system is not None or (
            self.residual is not None and self.jacobian is not None)

    def threshold(self, g0_norm):
        return self.tol * (1.0 + g0_norm) if self.relative_tol else self.tol

    def gauss_newton(self, x):
        if self.normal_system is not None:
            return self.normal_system(x)
        r = self.residual(x)
        J = self.jacobian(x)
        return 0.5 * float(r @ r), J.T @ r, J.T @ J


@dataclass
class SubsolveReport:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    reason: str
    warm_value: float

    @property
    def converged(self):
        return self.reason == "converged"


def levenberg_marquardt(spec):
    """Damped Gauss-Newton with multiplicative damping updates.

    The damping starts at ``1e-3 * max(diag(J^T J))``, is divided by 10 after
    every accepted step and multiplied by 10 after every rejected one.  Once
    the predicted decrease is below roundoff a step is accepted when it
    reduces the gradient norm without rising above the warm-start value.
    """
    if not spec.has_least_squares:
        raise ConfigurationError("levenberg_marquardt needs a residual view")
    x = np.array(spec.x0, dtype=float)
    f, g, H = spec.gauss_newton(x)
    warm = f
    if not np.isfinite(f):
        return SubsolveReport(x, f, np.inf, 0, "nonfinite", warm)
    gnorm = float(np.linalg.norm(g))
    thr = spec.threshold(gnorm)
    diag_max = float(np.max(H.diagonal())) if x.size else 0.0
    mu = 1e-3 * diag_max if diag_max > 0 else 1e-3
    mu_cap = 1e16 * max(diag_max, 1.0)
    it = 0
    reason = "max_iter"
    while it < spec.max_iter:
        if gnorm <= thr:
            reason = "converged"
            break
        it += 1
        try:
            step = _damped_step(H, mu, g)
        except np.linalg.LinAlgError:
            mu *= 10.0
            continue
        trial = x + step
        f_trial = spec.value(trial)
        # model decrease, using (H + mu I) step = -g
        pred = 0.5 * (mu * float(step @ step) - float(g @ step))
        flat = pred <= ROUNDOFF * (1.0 + abs(f))
        if np.isfinite(f_trial) and f_trial < f:
            x = trial
            f, g, H = spec.gauss_newton(x)
            gnorm = float(np.linalg.norm(g))
            mu = max(mu / 10.0, 1e-300)
        elif flat:
            # value differences are below roundoff; judge by the gradient
            f2, g2, H2 = spec.gauss_newton(trial)
            g2norm = float(np.linalg.norm(g2))
            if np.isfinite(f2) and f2 <= warm and g2norm < gnorm:
                x, f, g, H, gnorm = trial, f2, g2, H2, g2norm
            else:
                reason = "stalled"
                break
        else:
            mu *= 10.0
            if mu > mu_cap:
                reason = "stalled"
                break
    else:
        if gnorm <= thr:
            reason = "converged"
    return SubsolveReport(x, f, gnorm, it, reason, warm)


def _damped_step(H, mu, g):
    if isinstance(H, SymBanded):
        return H.solve_shifted(mu, -g)
    A = H.copy()
    A.flat[::A.shape[0] + 1] += mu
    return np.linalg.solve(A, -g)


def descent_fallback(spec):
    """Gradient descent with Armijo backtracking (``c = 1e-4``, halving).

    The first trial step of each iteration is the Barzilai-Borwein length
    from the previous pair, which keeps the method usable on moderately
    conditioned blocks.
    """
    x = np.array(spec.x0, dtype=float)
    f = spec.value(x)
    warm = f
    if not np.isfinite(f):
        return SubsolveReport(x, f, np.inf, 0, "nonfinite", warm)
    g = np.asarray(spec.grad(x), dtype=float)
    gnorm = float(np.linalg.norm(g))
    thr = spec.threshold(gnorm)
    t = 1.0 / max(gnorm, 1.0)
    it = 0
    reason = "max_iter"
    while True:
        if gnorm <= thr:
            reason = "converged"
            break
        if it >= spec.max_iter:
            break
        it += 1
        slope = gnorm * gnorm
        accepted = False
        for _ in range(60):
            trial = x - t * g
            f_trial = spec.value(trial)
            if np.isfinite(f_trial) and f_trial <= f - 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted or not f_trial < f:
            reason = "stalled"
            break
        g_new = np.asarray(spec.grad(trial), dtype=float)
        s = trial - x
        y = g_new - g
        sy = float(s @ y)
        x, f, g = trial, f_trial, g_new
        gnorm = float(np.linalg.norm(g))
        t = float(s @ s) / sy if sy > 0 else 2.0 * t
    return SubsolveReport(x, f, gnorm, it, reason, warm)


def nelder_mead(spec, max_dim=NELDER_MEAD_MAX_DIM):
    """Derivative-free simplex search (scipy's Nelder-Mead).

    Terminates on simplex diameter ``<= spec.tol``; returns the warm start
    unless the best vertex is no worse.
    """
    d = spec.d
    if d > max_dim:
        raise ConfigurationError(f"nelder_mead limited to d <= {max_dim}, got {d}")
    x0 = np.array(spec.x0, dtype=float)
    warm = spec.value(x0)
    res = scipy.optimize.minimize(
        spec.value, x0, method="Nelder-Mead",
        options={"xatol": spec.tol, "fatol": np.inf, "maxiter": spec.max_iter * 50 * d,
                 "maxfev": spec.max_iter * 100 * d, "adaptive": d > 2},
    )
    x, f = np.asarray(res.x, dtype=float), float(res.fun)
    if not f <= warm:
        x, f = x0, warm
    reason = "converged" if res.success else "max_iter"
    gnorm = float(np.linalg.norm(spec.grad(x))) if spec.grad is not None else float("nan")
    return SubsolveReport(x, f, gnorm, int(res.nit), reason, warm)


SOLVERS = {
    "lm": levenberg_marquardt,
    "descent": descent_fallback,
    "nelder-mead": nelder_mead,
}
