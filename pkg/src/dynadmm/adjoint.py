"""Reduced-space baseline: minimize ``F(v_0) = sum_i f_i(phi^i(v_0))``.

The gradient comes from one forward rollout and one backward sweep

    w_n = grad f_n(v_n),  w_{j-1} = J_phi(v_{j-1})^T w_j + grad f_{j-1}(v_{j-1}),

and ``grad F(v_0) = w_0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import NonFiniteError, UnsupportedShapeError
from .problem import Shape, evaluate_objective, feasibility_rollout

__all__ = [
    "AdjointWorkspace",
    "OptimizerOptions",
    "OptimizationTrace",
    "reduced_objective",
    "adjoint_gradient",
    "polak_ribiere_cg",
    "lbfgs",
]


def _require_explicit(problem):
    if problem.shape is not Shape.EXPLICIT:
        raise UnsupportedShapeError("the adjoint baseline needs the explicit shape")


@dataclass
class AdjointWorkspace:
    """Forward states ``v_0..v_n`` and adjoints ``w_0..w_n`` of the last evaluation."""

    v: np.ndarray
    w: np.ndarray


def reduced_objective(problem, v0):
    """Objective of the trajectory rolled out from ``v0``."""
    _require_explicit(problem)
    v = feasibility_rollout(problem, v0)
    return evaluate_objective(problem, v)


def adjoint_gradient(problem, v0, workspace=False):
    """Gradient of :func:`reduced_objective` by the backward adjoint sweep.

    With ``workspace=True`` returns ``(value, gradient, AdjointWorkspace)``
    instead of the gradient alone.
    """
    _require_explicit(problem)
    n = problem.n
    v = feasibility_rollout(problem, v0)
    w = np.empty_like(v)
    w[n] = problem.terms[n].grad(v[n])
    for j in range(n, 0, -1):
        w[j - 1] = problem.step_map(j - 1).transpose_product(v[j - 1], w[j]) + \
            problem.terms[j - 1].grad(v[j - 1])
        if not np.all(np.isfinite(w[j - 1])):
            raise NonFiniteError("adjoint sweep produced a non-finite value", step=j - 1)
    if workspace:
        return evaluate_objective(problem, v), w[0].copy(), AdjointWorkspace(v, w)
    return w[0].copy()


@dataclass(frozen=True)
class OptimizerOptions:
    max_iter: int = 1000
    gtol: float = 1e-8
    ftol: float = 0.0
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    restart_every: int | None = None


@dataclass
class OptimizationTrace:
    values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    evaluations: int = 0
    restarts: int = 0
    status: str = "running"

    def log(self, f, g):
        self.values.append(float(f))
        self.grad_norms.append(float(np.linalg.norm(g)))


class _Counted:
    """Value/gradient oracle that counts evaluations and maps blowups to inf."""

    def __init__(self, fun, grad, trace):
        self.fun, self.grad_fun, self.trace = fun, grad, trace

    def value(self, x):
        self.trace.evaluations += 1
        try:
            return float(self.fun(x))
        except (NonFiniteError, FloatingPointError, OverflowError):
            return np.inf

    def grad(self, x):
        return np.asarray(self.grad_fun(x), dtype=float)


def _as_pair(problem):
    """Accept a DynamicsProblem or an explicit ``(fun, grad)`` pair."""
    if isinstance(problem, tuple):
        fun, grad = problem
        return fun, grad
    return (lambda x: reduced_objective(problem, x)), (lambda x: adjoint_gradient(problem, x))


def _armijo(value, x, f, g, p, alpha, c1, max_halvings=60):
    """Backtracking from ``alpha``; first tries the quadratic-interpolation step."""
    slope = float(g @ p)
    f_a = value(x + alpha * p)
    # exact on quadratics: minimizer of the parabola through f(0), f'(0), f(alpha)
    curv = f_a - f - slope * alpha
    if np.isfinite(f_a) and curv > 0:
        a_q = -slope * alpha * alpha / (2.0 * curv)
        f_q = value(x + a_q * p)
        if np.isfinite(f_q) and f_q <= f + c1 * a_q * slope and f_q <= f_a:
            return a_q, f_q
    for _ in range(max_halvings):
        if np.isfinite(f_a) and f_a <= f + c1 * alpha * slope:
            return alpha, f_a
        alpha *= 0.5
        f_a = value(x + alpha * p)
    return None, f


def polak_ribiere_cg(problem, v0_init, options=None):
    """Nonlinear conjugate gradients with the PR+ update.

    Restarts with steepest descent every ``restart_every`` steps (default
    ``d * (n + 1)``), when the direction is not a descent direction, or
    when successive gradients lose orthogonality
    (``|g_k . g_{k+1}| >= 0.2 ||g_{k+1}||^2``).  A failed line search
    triggers one restart; a second consecutive failure ends the run.

    Parameters
    ----------
    problem : DynamicsProblem or (fun, grad)
    v0_init : array_like
    options : OptimizerOptions, optional

    Returns
    -------
    x : ndarray
    trace : OptimizationTrace
    """
    opts = OptimizerOptions() if options is None else options
    fun, grad = _as_pair(problem)
    trace = OptimizationTrace()
    oracle = _Counted(fun, grad, trace)
    x = np.array(v0_init, dtype=float)
    d = x.size
    every = opts.restart_every
    if every is None:
        every = d * (problem.n + 1) if not isinstance(problem, tuple) else d
    f = oracle.value(x)
    if not np.isfinite(f):
        raise NonFiniteError("objective is not finite at the starting point")
    g = oracle.grad(x)
    trace.log(f, g)
    p = -g
    alpha = 1.0 / max(float(np.linalg.norm(g)), 1.0)
    since_restart = 0
    failed_once = False
    for _ in range(opts.max_iter):
        if trace.grad_norms[-1] <= opts.gtol:
            trace.status = "converged"
            return x, trace
        step, f_new = _armijo(oracle.value, x, f, g, p, alpha, opts.c1)
        if step is None:
            if failed_once or since_restart == 0:
                trace.status = "line_search_failed"
                return x, trace
            failed_once = True
            trace.restarts += 1
            p, since_restart = -g, 0
            alpha = 1.0 / max(float(np.linalg.norm(g)), 1.0)
            continue
        failed_once = False
        x_new = x + step * p
        g_new = oracle.grad(x_new)
        df = f - f_new
        x, f_old, f = x_new, f, f_new
        gg = float(g @ g)
        beta = max(0.0, float(g_new @ (g_new - g)) / gg) if gg > 0 else 0.0
        nonconj = abs(float(g_new @ g)) >= 0.2 * float(g_new @ g_new)
        slope_old = float(g @ p)
        g = g_new
        trace.log(f, g)
        since_restart += 1
        if opts.ftol > 0 and df <= opts.ftol * max(1.0, abs(f_old)):
            trace.status = "ftol"
            return x, trace
        p_new = -g + beta * p
        if since_restart >= every or nonconj or float(g @ p_new) >= 0:
            p_new, since_restart = -g, 0
            trace.restarts += 1
        # reuse the last step length scaled by the slope ratio
        slope_new = float(g @ p_new)
        alpha = step * slope_old / slope_new if slope_new < 0 and slope_old < 0 else 1.0
        alpha = min(max(alpha, 1e-12), 1e12)
        p = p_new
    trace.status = "max_iter"
    return x, trace


def lbfgs(problem, v0_init, options=None):
    """Limited-memory BFGS with a strong-Wolfe line search.

    Pairs with ``s . y <= 1e-12 ||s|| ||y||`` are skipped.  When the Wolfe
    search fails the step falls back to Armijo backtracking; if that fails
    too the run stops.
    """
    opts = OptimizerOptions() if options is None else options
    fun, grad = _as_pair(problem)
    trace = OptimizationTrace()
    oracle = _Counted(fun, grad, trace)
    x = np.array(v0_init, dtype=float)
    f = oracle.value(x)
    if not np.isfinite(f):
        raise NonFiniteError("objective is not finite at the starting point")
    g = oracle.grad(x)
    trace.log(f, g)
    S, Y = [], []
    for _ in range(opts.max_iter):
        if trace.grad_norms[-1] <= opts.gtol:
            trace.status = "converged"
            return x, trace
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            a = float(s @ q) / float(y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
        else:
            q /= max(float(np.linalg.norm(g)), 1.0)
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = float(y @ q) / float(y @ s)
            q += (a - b) * s
        p = -q
        if float(g @ p) >= 0:
            S.clear()
            Y.clear()
            p = -g / max(float(np.linalg.norm(g)), 1.0)
        # a failed Wolfe search is handled below, so its warning is noise
        with np.errstate(over="ignore", invalid="ignore"), warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="The line search algorithm")
            res = scipy.optimize.line_search(oracle.value, oracle.grad, x, p, gfk=g, old_fval=f,
                                             c1=opts.c1, c2=opts.c2, maxiter=30)
        step, f_new = res[0], res[3]
        if step is None or not np.isfinite(f_new) or f_new > f:
            step, f_new = _armijo(oracle.value, x, f, g, p, 1.0, opts.c1)
            if step is None:
                trace.status = "line_search_failed"
                return x, trace
        x_new = x + step * p
        g_new = oracle.grad(x_new)
        s, y = x_new - x, g_new - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
            if len(S) > opts.memory:
                S.pop(0)
                Y.pop(0)
        df = f - f_new
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.log(f, g)
        if opts.ftol > 0 and df <= opts.ftol * max(1.0, abs(f_old)):
            trace.status = "ftol"
            return x, trace
    trace.status = "max_iter"
    return x, trace
