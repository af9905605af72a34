"""Proximal ADMM sweep for the controlled shape ``x_{j+1} = phi(x_j, u_j)``.

Each iteration first updates every control block by projected gradient on
its proximally regularized subproblem, then the states ``x_1 .. x_n`` in
increasing order with the controls frozen, then the multipliers.
"""

from __future__ import annotations

import numpy as np

from .admm import AdmmState, _assemble, _auglag_from, solve_block
from .diagnostics import IterationRecord
from .errors import ConfigurationError, DimensionError, NonFiniteError, SubsolverError
from .lagrangian import as_positive

__all__ = ["initial_control_state", "control_block_solve", "sweep_control", "control_residuals"]


def control_residuals(problem, x, u):
    """``(n, d)`` residuals ``x_{j+1} - phi(x_j, u_j)``."""
    dyn = problem.dynamics
    return np.array([x[j + 1] - dyn.value(x[j], u[j]) for j in range(problem.n)])


def initial_control_state(problem, init, lam0=None, rho=None):
    """Starting state from ``init = (x, u)``, ``u`` alone, or None.

    A missing trajectory is filled by rolling the dynamics out from ``x_0``
    under the given controls (zeros by default).
    """
    n, d, m = problem.n, problem.d, problem.m
    x = None
    if init is None:
        u = np.zeros((n + 1, m))
    elif isinstance(init, tuple):
        x, u = init
        u = np.asarray(u, dtype=float)
    else:
        u = np.asarray(init, dtype=float)
    if u.shape != (n + 1, m):
        raise DimensionError(f"controls have shape {u.shape}, expected {(n + 1, m)}")
    x = problem.rollout(u) if x is None else np.array(x, dtype=float)
    if x.shape != (n + 1, d):
        raise DimensionError(f"states have shape {x.shape}, expected {(n + 1, d)}")
    x[0] = problem.x0
    lam = np.zeros((n, d)) if lam0 is None else np.array(lam0, dtype=float)
    if lam.shape != (n, d):
        raise DimensionError(f"dual variables have shape {lam.shape}, expected {(n, d)}")
    state = AdmmState(x=x, x_prev=x.copy(), lam=lam, u=u.copy(), u_prev=u.copy())
    if rho is not None:
        rho = as_positive(rho, n, "rho")
        r = control_residuals(problem, x, u)
        obj = sum(t.value(x[i], u[i]) for i, t in enumerate(problem.terms))
        state.auglag = _auglag_from(obj, lam, r, rho)
    return state


def control_block_solve(problem, x, u_warm, lam, rho, xi, q, tol=1e-8, max_iter=500):
    """Projected-gradient solve of the control subproblem of block ``q``.

    Minimizes ``f_q(x_q, v) + rho_q/2 ||x_{q+1} - phi(x_q, v) + lambda_q/rho_q||^2
    + ||v - u_q||^2 / (2 xi_q)`` over the admissible set.  Backtracking
    along the projection arc with sufficient decrease ``1e-4 ||step||^2 / t``;
    the warm start is projected first and returned if nothing improves.
    """
    n = problem.n
    term = problem.terms[q]
    dyn = problem.dynamics
    proj = problem.project
    xq = x[q]
    inv_xi = 1.0 / xi
    anchor = u_warm
    target = x[q + 1] + lam[q] / rho[q] if q < n else None
    rq = rho[q] if q < n else 0.0

    def value(v):
        val = term.value(xq, v)
        if target is not None:
            e = target - dyn.value(xq, v)
            val += 0.5 * rq * float(e @ e)
        dv = v - anchor
        return float(val + 0.5 * inv_xi * float(dv @ dv))

    def grad(v):
        g = np.array(term.grad_u(xq, v), dtype=float)
        if target is not None:
            g -= rq * dyn.vjp_u(xq, v, target - dyn.value(xq, v))
        return g + inv_xi * (v - anchor)

    v = proj(np.array(u_warm, dtype=float))
    f = value(v)
    warm = value(np.asarray(u_warm, dtype=float))
    if f > warm:
        v, f = np.array(u_warm, dtype=float), warm
    g = grad(v)
    t = 1.0 / max(float(np.linalg.norm(g)), 1.0)
    thr = tol * (1.0 + float(np.linalg.norm(v - proj(v - g))))
    for _ in range(max_iter):
        pg = v - proj(v - g)
        if float(np.linalg.norm(pg)) <= thr:
            break
        for _ in range(60):
            trial = proj(v - t * g)
            step = trial - v
            f_trial = value(trial)
            if np.isfinite(f_trial) and f_trial <= f - 1e-4 * float(step @ step) / t:
                break
            t *= 0.5
        else:
            break
        if not f_trial < f:
            break
        g_new = grad(trial)
        s, y = trial - v, g_new - g
        sy = float(s @ y)
        v, f, g = trial, f_trial, g_new
        t = float(s @ s) / sy if sy > 0 else 2.0 * t
    return v, f, warm


def sweep_control(problem, state, params, clock=None):
    """Controls ``u_0 .. u_n``, then states ``x_1 .. x_n``, then multipliers."""
    if problem.project is None:
        raise ConfigurationError("controlled problem has no admissible-set projection")
    n = problem.n
    rho = params.penalties(n)
    eta = params.proximal(n)
    xi = as_positive(params.xi, n + 1, "xi")
    t0 = clock() if clock is not None else 0.0
    new = state.copy()
    new.x_prev = state.x.copy()
    new.u_prev = state.u.copy()
    for q in range(n + 1):
        v, f, warm = control_block_solve(problem, new.x, state.u[q], new.lam, rho, xi[q], q,
                                         tol=params.inner_tol)
        if not f <= warm:
            raise SubsolverError(f"control block {q}: value rose", block=q)
        new.u[q] = v
    frozen = problem.frozen(new.u)
    misses = 0
    for i in range(1, n + 1):
        spec = _assemble(frozen, new.x, new.lam, rho, eta, i, params)
        report = solve_block(spec, params, i)
        misses += not report.converged
        new.x[i] = report.x
    lam_old = new.lam.copy()
    r = control_residuals(problem, new.x, new.u)
    new.lam = lam_old + rho[:, None] * r
    new.iteration = state.iteration + 1
    wall = (clock() - t0) * 1e3 if clock is not None else 0.0
    new.record = _control_record(problem, frozen, new, lam_old, r, rho, eta, xi, wall, misses)
    new.auglag = new.record.auglag
    new.status = "running"
    return new


def _control_record(problem, frozen, state, lam_old, r, rho, eta, xi, wall, misses):
    x, u, lam = state.x, state.u, state.lam
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise NonFiniteError("controlled iterate became non-finite")
    obj = float(sum(t.value(x[i], u[i]) for i, t in enumerate(problem.terms)))
    dx = x - state.x_prev
    du = u - state.u_prev
    step_sq = np.sum(dx * dx, axis=1)
    auglag = _auglag_from(obj, lam, r, rho)
    # Lagrangian stationarity over the free states x_1..x_n and the controls
    n = problem.n
    dyn = problem.dynamics
    gx = np.zeros_like(x)
    gu = np.zeros_like(u)
    for i, t in enumerate(problem.terms):
        gx[i] = t.grad_x(x[i], u[i])
        gu[i] = t.grad_u(x[i], u[i])
    for j in range(n):
        gx[j + 1] += lam[j]
        gx[j] -= dyn.vjp_x(x[j], u[j], lam[j])
        gu[j] -= dyn.vjp_u(x[j], u[j], lam[j])
    proj_gap = np.array([u[q] - problem.project(u[q] - gu[q]) for q in range(n + 1)])
    stat = max(float(np.max(np.abs(gx[1:]))), float(np.max(np.abs(proj_gap))))
    return IterationRecord(
        iteration=state.iteration,
        objective=obj,
        constraint_inf=float(np.max(np.abs(r))),
        constraint_sq=float(np.sum(r * r)),
        auglag=auglag,
        lyapunov=auglag + float(np.sum(step_sq / (4.0 * eta)))
        + float(np.sum(np.sum(du * du, axis=1) / (4.0 * xi))),
        primal_step=max(float(np.max(np.abs(dx))), float(np.max(np.abs(du)))),
        dual_step=float(np.max(np.abs(lam - lam_old))),
        kkt_stat=stat,
        wall_ms=wall,
        auglag_primal=_auglag_from(obj, lam_old, r, rho),
        block_step_sq=step_sq,
        inner_misses=misses,
    )
