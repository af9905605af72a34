"""Gauss-Seidel proximal ADMM over dynamics-constrained block problems.

One iteration updates the primal blocks one at a time, each by minimizing

    f_i(z) + rho_{i-1}/2 ||lhs_{i-1}(z) - t_L||^2
           + rho_i/2 ||t_R - rhs_i(z)||^2 + 1/(2 eta_i) ||z - x_i^k||^2

with ``t_L = rhs_{i-1}(x_{i-1}) - lambda_{i-1}/rho_{i-1}`` and
``t_R = lhs_i(x_{i+1}) + lambda_i/rho_i`` taken at the newest available
neighbours, and then takes one dual ascent step per constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .banded import SymBanded, as_dense
from .diagnostics import IterationRecord
from .errors import (ConfigurationError, DynAdmmError, NonFiniteError, ParameterError,
                     SubsolverError, UnsupportedShapeError)
from .lagrangian import as_positive, lagrangian_gradient
from .problem import ControlledProblem, Shape, as_blocks, constraint_residuals
from .subsolvers import SOLVERS, SubproblemSpec

__all__ = [
    "AdmmParams",
    "AdmmState",
    "block_subproblem_assemble",
    "solve_block",
    "sweep_forward",
    "sweep_reverse",
    "dual_update",
    "initial_state",
    "solve",
]

log = logging.getLogger(__name__)

DESCENT_SLACK = 1e-10
BANDED_MIN_DIM = 32


@dataclass(frozen=True)
class AdmmParams:
    """Penalties, proximal weights, stopping rules and subsolver settings.

    Parameters
    ----------
    rho : float or array_like
        Penalties ``rho_0 .. rho_{n-1}``; a scalar is broadcast.
    eta : float or array_like
        Proximal weights ``eta_0 .. eta_n``.
    xi : float or array_like, optional
        Proximal weights of the control blocks (controlled problems only).
    max_iter : int
        Iteration cap.
    step_tol, feas_tol, kkt_tol : float or None
        The run stops when ``primal_step <= step_tol`` and
        ``constraint_inf <= feas_tol``, or when ``kkt_stat <= kkt_tol`` and
        ``constraint_inf <= feas_tol``.  ``None`` disables a test; with
        both the step and KKT tests disabled, feasibility alone stops the
        run (status ``"feas"``).
    subsolver : {"auto", "lm", "descent", "nelder-mead"}
        ``"auto"`` uses Levenberg-Marquardt when the block objective has a
        least-squares view and descent otherwise.
    inner_tol : float
        Inner gradient tolerance, relative to ``1 + ||grad at warm start||``
        unless ``inner_relative`` is false.
    """

    rho: object = 1.0
    eta: object = 1.0
    xi: object = 1.0
    max_iter: int = 1000
    step_tol: Optional[float] = 1e-9
    feas_tol: Optional[float] = 1e-8
    kkt_tol: Optional[float] = 1e-8
    subsolver: str = "auto"
    inner_tol: float = 1e-8
    inner_relative: bool = True
    inner_max_iter: int = 100

    def __post_init__(self):
        if self.subsolver != "auto" and self.subsolver not in SOLVERS:
            raise ConfigurationError(f"unknown subsolver {self.subsolver!r}")
        if self.max_iter < 0:
            raise ParameterError("max_iter must be nonnegative")
        for name in ("step_tol", "feas_tol", "kkt_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterError(f"{name} must be positive or None")
        if not self.inner_tol > 0:
            raise ParameterError("inner_tol must be positive")

    def penalties(self, n):
        return as_positive(self.rho, n, "rho")

    def proximal(self, n):
        return as_positive(self.eta, n + 1, "eta")


@dataclass
class AdmmState:
    """Iterate ``(x^k, x^{k-1}, lambda^k)`` plus bookkeeping.

    ``auglag`` caches ``L_rho(x^k, lambda^k)``, the reference value of the
    next sweep's descent check.
    """

    x: np.ndarray
    x_prev: np.ndarray
    lam: np.ndarray
    u: Optional[np.ndarray] = None
    u_prev: Optional[np.ndarray] = None
    iteration: int = 0
    record: Optional[IterationRecord] = None
    auglag: float = float("nan")
    status: str = "initial"

    def copy(self):
        cp = lambda a: None if a is None else a.copy()
        return replace(self, x=self.x.copy(), x_prev=self.x_prev.copy(), lam=self.lam.copy(),
                       u=cp(self.u), u_prev=cp(self.u_prev))


# -- block subproblems --------------------------------------------------------

@dataclass
class _Block:
    """Data of one block subproblem, held so closures stay cheap."""

    problem: object
    i: int
    anchor: np.ndarray
    inv_eta: float
    left: Optional[tuple]   # (j, t_L, rho_j)
    right: Optional[tuple]  # (j, t_R, rho_j)
    term: object = field(init=False)

    def __post_init__(self):
        self.term = self.problem.terms[self.i]

    def value(self, z):
        p = self.problem
        v = self.term.value(z)
        if self.left is not None:
            j, t, r = self.left
            e = p.lhs(j, z) - t
            v += 0.5 * r * float(e @ e)
        if self.right is not None:
            j, t, r = self.right
            e = t - p.rhs(j, z)
            v += 0.5 * r * float(e @ e)
        dz = z - self.anchor
        return float(v + 0.5 * self.inv_eta * float(dz @ dz))

    def grad(self, z):
        p = self.problem
        g = np.array(self.term.grad(z), dtype=float)
        if self.left is not None:
            j, t, r = self.left
            g += r * p.lhs_tvp(j, z, p.lhs(j, z) - t)
        if self.right is not None:
            j, t, r = self.right
            g -= r * p.rhs_tvp(j, z, t - p.rhs(j, z))
        return g + self.inv_eta * (z - self.anchor)

    def residual(self, z):
        p = self.problem
        parts = [self.term.residual(z)]
        if self.left is not None:
            j, t, r = self.left
            parts.append(np.sqrt(r) * (p.lhs(j, z) - t))
        if self.right is not None:
            j, t, r = self.right
            parts.append(np.sqrt(r) * (t - p.rhs(j, z)))
        parts.append(np.sqrt(self.inv_eta) * (z - self.anchor))
        return np.concatenate(parts)

    def jacobian(self, z):
        p = self.problem
        d = z.shape[0]
        eye = np.eye(d)
        rows = [np.asarray(self.term.residual_jac(z), dtype=float).reshape(-1, d)]
        if self.left is not None:
            j, _, r = self.left
            J = p.lhs_jac(j, z)
            rows.append(np.sqrt(r) * (eye if J is None else J))
        if self.right is not None:
            j, _, r = self.right
            J = p.rhs_jac(j, z)
            rows.append(-np.sqrt(r) * (eye if J is None else J))
        rows.append(np.sqrt(self.inv_eta) * eye)
        return np.vstack(rows)

    def normal_system(self, z):
        """``(value, J^T r, J^T J)`` of the stacked residual, without stacking.

        The matrix is banded when every piece is (diagonal objective part,
        banded constraint Jacobians), dense otherwise.
        """
        p = self.problem
        val, g, Hf = self.term.gauss_newton(z)
        g = np.array(g, dtype=float)
        diag = self.inv_eta
        grams = []
        if self.left is not None:
            j, t, r = self.left
            v, J = p.lhs_linearize(j, z)
            e = v - t
            val += 0.5 * r * float(e @ e)
            if J is None:
                g += r * e
                diag += r
            else:
                g += r * _t_dot(J, e)
                grams.append((r, J))
        if self.right is not None:
            j, t, r = self.right
            v, J = p.rhs_linearize(j, z)
            e = t - v
            val += 0.5 * r * float(e @ e)
            if J is None:
                g -= r * e
                diag += r
            else:
                g -= r * _t_dot(J, e)
                grams.append((r, J))
        dz = z - self.anchor
        val += 0.5 * self.inv_eta * float(dz @ dz)
        g += self.inv_eta * dz
        return val, g, _gauss_newton_matrix(np.asarray(Hf, dtype=float), diag, grams, z.shape[0])


def _t_dot(J, e):
    return J.T_dot(e) if hasattr(J, "T_dot") else e @ J


def _gauss_newton_matrix(Hf, diag, grams, d):
    banded = Hf.ndim == 1 and all(hasattr(J, "gram") for _, J in grams)
    if banded and (grams or d > BANDED_MIN_DIM):
        H = SymBanded.from_diagonal(Hf + diag, 0)
        for r, J in grams:
            H.add_scaled(J.gram(), r)
        return H
    H = np.diag(Hf) if Hf.ndim == 1 else Hf.copy()
    for r, J in grams:
        Jd = as_dense(J)
        H += r * (Jd.T @ Jd)
    H.flat[::d + 1] += diag
    return H


def _assemble(problem, x, lam, rho, eta, i, params):
    n = problem.n
    left = right = None
    if i >= 1:
        j = i - 1
        left = (j, problem.rhs(j, x[j]) - lam[j] / rho[j], float(rho[j]))
    if i <= n - 1:
        right = (i, problem.lhs(i, x[i + 1]) + lam[i] / rho[i], float(rho[i]))
    blk = _Block(problem, i, x[i].copy(), 1.0 / float(eta[i]), left, right)
    ls = blk.term.least_squares
    return SubproblemSpec(
        x0=x[i].copy(),
        value=blk.value,
        grad=blk.grad,
        residual=blk.residual if ls else None,
        jacobian=blk.jacobian if ls else None,
        normal_system=blk.normal_system if ls else None,
        tol=params.inner_tol,
        relative_tol=params.inner_relative,
        max_iter=params.inner_max_iter,
    )


def block_subproblem_assemble(problem, state, params, i):
    """Subproblem of block ``i`` at the current (partially updated) state."""
    if not 0 <= i <= problem.n:
        raise IndexError(f"block index {i} outside 0..{problem.n}")
    rho = params.penalties(problem.n)
    eta = params.proximal(problem.n)
    return _assemble(problem, state.x, state.lam, rho, eta, i, params)


def _pick_solver(spec, params):
    name = params.subsolver
    if name == "auto":
        name = "lm" if spec.has_least_squares else "descent"
    return SOLVERS[name]


def solve_block(spec, params, block):
    """Run the configured subsolver and enforce the descent contract."""
    report = _pick_solver(spec, params)(spec)
    if not np.all(np.isfinite(report.x)) or not np.isfinite(report.value):
        raise SubsolverError(f"block {block}: subsolver returned a non-finite point",
                             block=block, report=report)
    if not report.value <= report.warm_value:
        raise SubsolverError(
            f"block {block}: subproblem value rose from {report.warm_value!r} to {report.value!r}",
            block=block, report=report)
    return report


def _primal_pass(problem, state, params, order, rho, eta):
    misses = 0
    for i in order:
        spec = _assemble(problem, state.x, state.lam, rho, eta, i, params)
        report = solve_block(spec, params, i)
        if not report.converged:
            misses += 1
        state.x[i] = report.x
    return misses


def dual_update(problem, state, params, j, rho=None):
    """``lambda_j <- lambda_j + rho_j r_j`` at the current primal blocks, in place."""
    if not 0 <= j < problem.n:
        raise IndexError(f"constraint index {j} outside 0..{problem.n - 1}")
    if rho is None:
        rho = params.penalties(problem.n)
    r = problem.residual(j, state.x[j], state.x[j + 1])
    state.lam[j] = state.lam[j] + rho[j] * r
    return state.lam[j]


def _check_shape(problem, allowed, name):
    if problem.shape not in allowed:
        raise UnsupportedShapeError(f"{name} does not handle the {problem.shape.value} shape")


def _sweep(problem, state, params, order, clock):
    rho = params.penalties(problem.n)
    eta = params.proximal(problem.n)
    t0 = clock() if clock is not None else 0.0
    new = state.copy()
    new.x_prev = state.x.copy()
    misses = _primal_pass(problem, new, params, order, rho, eta)
    lam_old = new.lam.copy()
    for j in range(problem.n):
        dual_update(problem, new, params, j, rho)
    new.iteration = state.iteration + 1
    wall = (clock() - t0) * 1e3 if clock is not None else 0.0
    new.record = _record(problem, new, lam_old, rho, eta, wall, misses)
    new.auglag = new.record.auglag
    new.status = "running"
    return new


def sweep_forward(problem, state, params, clock=None):
    """One iteration with blocks updated in the order ``0, 1, ..., n``."""
    _check_shape(problem, (Shape.EXPLICIT, Shape.SEMI_IMPLICIT), "sweep_forward")
    return _sweep(problem, state, params, range(problem.n + 1), clock)


def sweep_reverse(problem, state, params, clock=None):
    """One iteration with blocks updated in the order ``n, ..., 1, 0``."""
    _check_shape(problem, (Shape.IMPLICIT,), "sweep_reverse")
    return _sweep(problem, state, params, range(problem.n, -1, -1), clock)


# -- records ------------------------------------------------------------------

def _auglag_from(obj, lam, r, rho):
    return float(obj + np.sum(lam * r) + 0.5 * np.sum(rho * np.sum(r * r, axis=1)))


def _record(problem, state, lam_old, rho, eta, wall, misses):
    x = state.x
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
        raise NonFiniteError(f"block {bad} became non-finite", step=bad)
    r = constraint_residuals(problem, x)
    obj = float(sum(t.value(x[i]) for i, t in enumerate(problem.terms)))
    dx = x - state.x_prev
    step_sq = np.sum(dx * dx, axis=1)
    auglag = _auglag_from(obj, state.lam, r, rho)
    grad = lagrangian_gradient(problem, x, state.lam, r)
    return IterationRecord(
        iteration=state.iteration,
        objective=obj,
        constraint_inf=float(np.max(np.abs(r))) if r.size else 0.0,
        constraint_sq=float(np.sum(r * r)),
        auglag=auglag,
        lyapunov=auglag + float(np.sum(step_sq / (4.0 * eta))),
        primal_step=float(np.max(np.abs(dx))),
        dual_step=float(np.max(np.abs(state.lam - lam_old))) if r.size else 0.0,
        kkt_stat=float(np.max(np.abs(grad))),
        wall_ms=wall,
        auglag_primal=_auglag_from(obj, lam_old, r, rho),
        block_step_sq=step_sq,
        inner_misses=misses,
    )


# -- driver -------------------------------------------------------------------

def initial_state(problem, x0, lam0=None, rho=None):
    """Validated starting state; ``lam0`` defaults to zeros.

    With ``rho`` given, ``auglag`` is set to ``L_rho(x0, lam0)``.
    """
    if isinstance(problem, ControlledProblem):
        from .control import initial_control_state
        return initial_control_state(problem, x0, lam0, rho)
    x = as_blocks(x0, problem.n + 1, problem.d).copy()
    lam = (np.zeros((problem.n, problem.d)) if lam0 is None
           else as_blocks(lam0, problem.n, problem.d, name="dual variables").copy())
    state = AdmmState(x=x, x_prev=x.copy(), lam=lam)
    if rho is not None:
        r = constraint_residuals(problem, x)
        obj = float(sum(t.value(x[i]) for i, t in enumerate(problem.terms)))
        state.auglag = _auglag_from(obj, lam, r, as_positive(rho, problem.n, "rho"))
    return state


def _stop_reason(rec, params):
    feas_ok = params.feas_tol is None or rec.constraint_inf <= params.feas_tol
    if params.kkt_tol is not None and rec.kkt_stat <= params.kkt_tol and feas_ok:
        return "kkt"
    if params.step_tol is not None and params.feas_tol is not None:
        if rec.primal_step <= params.step_tol and feas_ok:
            return "step"
    if params.kkt_tol is None and params.step_tol is None and params.feas_tol is not None:
        if feas_ok:
            return "feas"
    return None


def _sweeper(problem):
    if isinstance(problem, ControlledProblem):
        from .control import sweep_control
        return sweep_control
    if problem.shape is Shape.IMPLICIT:
        return sweep_reverse
    return sweep_forward


def solve(problem, x0, lam0=None, params=None, callback=None, clock=None):
    """Iterate sweeps until a stopping rule fires or ``max_iter`` is reached.

    Parameters
    ----------
    problem : DynamicsProblem or ControlledProblem
    x0 : array_like
        Initial trajectory, ``(n + 1, d)``.  For controlled problems pass
        ``(x, u)``.
    lam0 : array_like, optional
        Initial multipliers; zeros by default.
    params : AdmmParams
    callback : callable, optional
        ``callback(state)`` after every iteration; returning True stops.
    clock : callable, optional
        Seconds counter for ``wall_ms``; None records zeros so logs stay
        reproducible.

    Returns
    -------
    state : AdmmState
    records : list of IterationRecord
        The log.  On a sweep failure the raised error carries the partial
        log as ``error.log``.
    """
    params = AdmmParams() if params is None else params
    eta = params.proximal(problem.n)
    state = initial_state(problem, x0, lam0, params.penalties(problem.n))
    sweep = _sweeper(problem)
    records = []
    if params.max_iter == 0:
        state.status = "max_iter"
        return state, records
    while state.iteration < params.max_iter:
        prev = state.auglag
        try:
            state = sweep(problem, state, params, clock=clock)
        except DynAdmmError as err:
            err.log = records
            err.state = state
            raise
        rec = state.record
        rec.descent_gap = (rec.auglag_primal + float(np.sum(rec.block_step_sq / (2.0 * eta)))
                           - prev)
        if rec.descent_gap > DESCENT_SLACK * (1.0 + abs(prev)):
            log.warning("iteration %d: primal sweep raised L_rho by %.3g", rec.iteration,
                        rec.descent_gap)
        records.append(rec)
        reason = _stop_reason(state.record, params)
        if callback is not None and callback(state):
            reason = reason or "callback"
        if reason is not None:
            state.status = reason
            return state, records
    state.status = "max_iter"
    return state, records
