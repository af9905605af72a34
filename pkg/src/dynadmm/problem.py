"""Dynamics-constrained problem model.

A problem couples ``n + 1`` blocks ``x_0, ..., x_n`` (each in ``R^d``) through
``n`` constraints.  Every constraint shape is written uniformly as

    r_j = lhs_j(x_{j+1}) - rhs_j(x_j),    j = 0, ..., n - 1

with

* explicit:       lhs = identity,  rhs = phi_j
* semi-implicit:  lhs = A_j @ .,   rhs = phi_j
* implicit:       lhs = phi_j,     rhs = identity

so that the Lagrangian, the block subproblems and the dual update need no
shape-specific code.  Trajectories are ``(n + 1, d)`` float arrays and dual
variables are ``(n, d)`` arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import DimensionError, NonFiniteError, ParameterError, UnsupportedShapeError

__all__ = [
    "Shape",
    "ObjectiveTerm",
    "DynamicsMap",
    "DynamicsProblem",
    "ControlTerm",
    "ControlledMap",
    "ControlledProblem",
    "as_blocks",
    "evaluate_objective",
    "constraint_residuals",
    "feasibility_rollout",
    "fd_gradient",
    "relative_error",
    "check_term_gradient",
    "check_map_transpose",
]

DENSE_SOLVE_LIMIT = 512


class Shape(enum.Enum):
    EXPLICIT = "explicit"
    SEMI_IMPLICIT = "semi-implicit"
    IMPLICIT = "implicit"
    CONTROLLED = "controlled"


@dataclass(frozen=True)
class ObjectiveTerm:
    """One summand ``f_i`` of the objective.

    ``residual``/``residual_jac`` are optional; when given, ``value`` must
    equal ``0.5 * ||residual(x)||**2``.  ``normal`` optionally returns
    ``(value, J^T r, H)`` directly, a shortcut for structured terms; ``H``
    is ``J^T J`` or, when that matrix is diagonal, its diagonal.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    residual: Optional[Callable[[np.ndarray], np.ndarray]] = None
    residual_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    index: Optional[int] = None
    normal: Optional[Callable[[np.ndarray], tuple]] = None

    @property
    def least_squares(self):
        return self.residual is not None and self.residual_jac is not None

    def gauss_newton(self, x):
        """``(f(x), J^T r, H)`` of the least-squares view (``H`` possibly 1-D, see above)."""
        if self.normal is not None:
            return self.normal(x)
        r = self.residual(x)
        J = np.asarray(self.residual_jac(x), dtype=float).reshape(-1, x.shape[0])
        return 0.5 * float(r @ r), J.T @ r, J.T @ J

    @classmethod
    def zero(cls, d, index=None):
        """``f == 0`` with an empty residual."""
        empty_jac = np.zeros((0, d))
        return cls(
            value=lambda x: 0.0,
            grad=lambda x: np.zeros(d),
            residual=lambda x: np.zeros(0),
            residual_jac=lambda x: empty_jac,
            index=index,
            normal=lambda x: (0.0, np.zeros(d), np.zeros(d)),
        )

    @classmethod
    def from_residual(cls, residual, residual_jac, index=None):
        def value(x):
            r = residual(x)
            return 0.5 * float(r @ r)

        def grad(x):
            return residual_jac(x).T @ residual(x)

        return cls(value, grad, residual, residual_jac, index)

    @classmethod
    def tracking(cls, targets, weights=None, index=None):
        """Sum of ``0.5 * w_k * ||x - t_k||**2`` over the given targets."""
        targets = [np.asarray(t, dtype=float) for t in targets]
        if weights is None:
            weights = [1.0] * len(targets)
        d = targets[0].shape[0]
        roots = np.sqrt(np.asarray(weights, dtype=float))
        stacked_t = np.concatenate([s * t for s, t in zip(roots, targets)])
        jac = np.concatenate([s * np.eye(d) for s in roots])
        w = roots * roots
        wsum = float(w.sum())
        wt = sum(wk * t for wk, t in zip(w, targets))
        hess = np.full(d, wsum)
        reps = np.repeat(roots, d)

        def residual(x):
            return reps * np.tile(x, len(roots)) - stacked_t

        def grad(x):
            return wsum * x - wt

        def normal(x):
            r = residual(x)
            return 0.5 * float(r @ r), wsum * x - wt, hess.copy()

        def value(x):
            r = residual(x)
            return 0.5 * float(r @ r)

        return cls(value=value, grad=grad,
                   residual=residual, residual_jac=lambda x: jac, index=index, normal=normal)

    @classmethod
    def quadratic(cls, Q, q=None, index=None):
        """``0.5 x'Qx + q'x`` (no least-squares view)."""
        Q = np.asarray(Q, dtype=float)
        q = np.zeros(Q.shape[0]) if q is None else np.asarray(q, dtype=float)
        return cls(
            value=lambda x: 0.5 * float(x @ Q @ x) + float(q @ x),
            grad=lambda x: Q @ x + q,
            index=index,
        )


@dataclass(frozen=True)
class DynamicsMap:
    """A map ``phi: R^d -> R^d`` with Jacobian-transpose products.

    At least one of ``vjp`` (``(x, w) -> J(x)^T w``) or ``jacobian``
    (``x -> J(x)``) must be supplied.  ``linearize`` optionally returns
    ``(phi(x), J(x))`` in one call, where ``J`` may be a banded operator
    (see ``dynadmm.banded``).
    """

    value: Callable[[np.ndarray], np.ndarray]
    vjp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    linearize: Optional[Callable[[np.ndarray], tuple]] = None
    linear: bool = False

    def __post_init__(self):
        if self.vjp is None and self.jacobian is None:
            raise ParameterError("DynamicsMap needs a vjp or a jacobian callback")

    def __call__(self, x):
        return self.value(x)

    def transpose_product(self, x, w):
        if self.vjp is not None:
            return self.vjp(x, w)
        return self.jacobian(x).T @ w

    def jacobian_matrix(self, x):
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        d = x.shape[0]
        eye = np.eye(d)
        # row k of J is J^T e_k
        return np.array([self.vjp(x, eye[k]) for k in range(d)])

    def value_and_jacobian(self, x):
        if self.linearize is not None:
            return self.linearize(x)
        return self.value(x), self.jacobian_matrix(x)

    @classmethod
    def identity(cls, d):
        eye = np.eye(d)
        return cls(value=lambda x: x.copy(), vjp=lambda x, w: w.copy(),
                   jacobian=lambda x: eye, linear=True)

    @classmethod
    def from_matrix(cls, A, b=None):
        A = np.asarray(A, dtype=float)
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
        return cls(value=lambda x: A @ x + b, vjp=lambda x, w: A.T @ w,
                   jacobian=lambda x: A, linear=True)


def _make_solver(A):
    """Return ``b -> A^{-1} b`` for a per-step semi-implicit matrix."""
    if scipy.sparse.issparse(A):
        lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(A))
        return lu.solve
    A = np.asarray(A, dtype=float)
    if A.shape[0] <= DENSE_SOLVE_LIMIT:
        factors = scipy.linalg.lu_factor(A)
        return lambda b: scipy.linalg.lu_solve(factors, b)

    def iterative(b):
        x, info = scipy.sparse.linalg.gmres(A, b, rtol=1e-14, atol=0.0, restart=100, maxiter=50)
        if info != 0:
            raise NonFiniteError("GMRES did not converge on semi-implicit system")
        return x

    return iterative


@dataclass(frozen=True)
class DynamicsProblem:
    """``min sum_i f_i(x_i)`` subject to ``n`` dynamics constraints.

    Parameters
    ----------
    terms : sequence of ObjectiveTerm
        ``n + 1`` objective terms.
    dynamics : DynamicsMap or sequence of DynamicsMap
        One map shared by all steps, or ``n`` per-step maps (non-autonomous).
    d : int
        Block dimension.
    shape : Shape
        Constraint family; ``CONTROLLED`` problems use ControlledProblem.
    matrices : sequence of (d, d) arrays, optional
        The ``A_j`` of the semi-implicit shape.
    cond_cap : float
        Largest accepted condition number of any ``A_j``.
    """

    terms: tuple
    dynamics: object
    d: int
    shape: Shape = Shape.EXPLICIT
    matrices: Optional[tuple] = None
    cond_cap: float = 1e12
    _solvers: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.terms) < 1:
            raise DimensionError("need at least one objective term")
        if self.d < 1:
            raise DimensionError("block dimension must be >= 1")
        if self.shape is Shape.CONTROLLED:
            raise UnsupportedShapeError("use ControlledProblem for the controlled shape")
        if not isinstance(self.dynamics, DynamicsMap):
            maps = tuple(self.dynamics)
            if len(maps) != self.n:
                raise DimensionError(f"expected {self.n} per-step maps, got {len(maps)}")
            object.__setattr__(self, "dynamics", maps)
        if self.shape is Shape.SEMI_IMPLICIT:
            if self.matrices is None or len(self.matrices) != self.n:
                raise DimensionError(f"semi-implicit shape needs {self.n} matrices")
            solvers = []
            for j, A in enumerate(self.matrices):
                if A.shape != (self.d, self.d):
                    raise DimensionError(f"A_{j} has shape {A.shape}", block=j)
                if not scipy.sparse.issparse(A) and self.d <= DENSE_SOLVE_LIMIT:
                    cond = np.linalg.cond(A)
                    if not np.isfinite(cond) or cond > self.cond_cap:
                        raise ParameterError(f"A_{j} condition number {cond:.3g} exceeds cap")
                solvers.append(_make_solver(A))
            object.__setattr__(self, "matrices", tuple(self.matrices))
            object.__setattr__(self, "_solvers", tuple(solvers))

    @property
    def n(self):
        return len(self.terms) - 1

    def step_map(self, j):
        if isinstance(self.dynamics, DynamicsMap):
            return self.dynamics
        return self.dynamics[j]

    # -- constraint links -------------------------------------------------
    def lhs(self, j, x):
        if self.shape is Shape.EXPLICIT:
            return x
        if self.shape is Shape.SEMI_IMPLICIT:
            return self.matrices[j] @ x
        return self.step_map(j)(x)

    def rhs(self, j, x):
        if self.shape is Shape.IMPLICIT:
            return x
        return self.step_map(j)(x)

    def lhs_tvp(self, j, x, w):
        if self.shape is Shape.EXPLICIT:
            return w
        if self.shape is Shape.SEMI_IMPLICIT:
            return self.matrices[j].T @ w
        return self.step_map(j).transpose_product(x, w)

    def rhs_tvp(self, j, x, w):
        if self.shape is Shape.IMPLICIT:
            return w
        return self.step_map(j).transpose_product(x, w)

    def lhs_jac(self, j, x):
        """Jacobian of ``lhs_j``; ``None`` means identity."""
        if self.shape is Shape.EXPLICIT:
            return None
        if self.shape is Shape.SEMI_IMPLICIT:
            A = self.matrices[j]
            return A.toarray() if scipy.sparse.issparse(A) else np.asarray(A)
        return self.step_map(j).jacobian_matrix(x)

    def rhs_jac(self, j, x):
        """Jacobian of ``rhs_j``; ``None`` means identity."""
        if self.shape is Shape.IMPLICIT:
            return None
        return self.step_map(j).jacobian_matrix(x)

    def lhs_linearize(self, j, x):
        """``(lhs_j(x), J)`` with ``J = None`` for the identity."""
        if self.shape is Shape.EXPLICIT:
            return x, None
        if self.shape is Shape.SEMI_IMPLICIT:
            return self.lhs(j, x), self.lhs_jac(j, x)
        return self.step_map(j).value_and_jacobian(x)

    def rhs_linearize(self, j, x):
        """``(rhs_j(x), J)`` with ``J = None`` for the identity."""
        if self.shape is Shape.IMPLICIT:
            return x, None
        return self.step_map(j).value_and_jacobian(x)

    def residual(self, j, x_j, x_next):
        return self.lhs(j, x_next) - self.rhs(j, x_j)

    def solve_lhs(self, j, b):
        """Solve ``lhs_j(y) = b`` for the explicit and semi-implicit shapes."""
        if self.shape is Shape.EXPLICIT:
            return np.array(b, dtype=float)
        if self.shape is Shape.SEMI_IMPLICIT:
            return self._solvers[j](b)
        raise UnsupportedShapeError("implicit shape: lhs is nonlinear, use a Newton solve")


def as_blocks(x, count, d, name="trajectory"):
    """Validate and convert ``x`` to a ``(count, d)`` float array.

    Raises DimensionError naming the first nonconforming block.
    """
    if isinstance(x, np.ndarray) and x.ndim == 2:
        if x.shape[1] != d:
            raise DimensionError(f"{name} blocks have dimension {x.shape[1]}, expected {d}", block=0)
        if x.shape[0] != count:
            raise DimensionError(f"{name} has {x.shape[0]} blocks, expected {count}")
        return np.asarray(x, dtype=float)
    blocks = list(x)
    for k, b in enumerate(blocks):
        b = np.asarray(b, dtype=float)
        if b.ndim != 1 or b.shape[0] != d:
            raise DimensionError(f"{name} block has shape {b.shape}, expected ({d},)", block=k)
    if len(blocks) != count:
        raise DimensionError(f"{name} has {len(blocks)} blocks, expected {count}")
    return np.array(blocks, dtype=float).reshape(count, d)


def evaluate_objective(problem, x):
    """Return ``sum_i f_i(x_i)``."""
    x = as_blocks(x, problem.n + 1, problem.d)
    return float(sum(term.value(x[i]) for i, term in enumerate(problem.terms)))


def constraint_residuals(problem, x):
    """Return the ``(n, d)`` array of shape-appropriate residuals ``r_j``."""
    x = as_blocks(x, problem.n + 1, problem.d)
    r = np.empty((problem.n, problem.d))
    for j in range(problem.n):
        r[j] = problem.residual(j, x[j], x[j + 1])
    return r


def feasibility_rollout(problem, x0):
    """Roll the dynamics forward from ``x0`` so every constraint holds.

    The semi-implicit shape solves ``A_j x_{j+1} = phi_j(x_j)`` at each step.
    """
    if problem.shape is Shape.IMPLICIT:
        raise UnsupportedShapeError(
            "rollout is undefined for the implicit shape; solve phi(x_{j+1}) = x_j by Newton"
        )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.d,):
        raise DimensionError(f"initial state has shape {x0.shape}", block=0)
    x = np.empty((problem.n + 1, problem.d))
    x[0] = x0
    for j in range(problem.n):
        x[j + 1] = problem.solve_lhs(j, problem.rhs(j, x[j]))
        if not np.all(np.isfinite(x[j + 1])):
            raise NonFiniteError("rollout produced a non-finite state", step=j + 1)
    return x


# -- finite-difference oracles ---------------------------------------------

def fd_gradient(fun, x, h=None):
    """Central-difference gradient with step ``1e-6 * (1 + ||x||)``."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-6 * (1.0 + np.linalg.norm(x))
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def relative_error(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def check_term_gradient(term, points):
    """Largest relative error between ``term.grad`` and central differences."""
    return max(relative_error(term.grad(p), fd_gradient(term.value, p)) for p in points)


def check_map_transpose(dmap, points, rng):
    """Largest relative error of ``J(x)^T w`` against differences of ``w . phi``."""
    worst = 0.0
    for p in points:
        w = rng.standard_normal(p.shape[0])
        fd = fd_gradient(lambda z: float(w @ dmap(z)), p)
        worst = max(worst, relative_error(dmap.transpose_product(p, w), fd))
    return worst


# -- controlled shape ---------------------------------------------------------

@dataclass(frozen=True)
class ControlTerm:
    """Stage cost ``f_i(x, u)`` with gradients in both arguments."""

    value: Callable
    grad_x: Callable
    grad_u: Callable

    @classmethod
    def quadratic(cls, Q, R, x_ref=None, u_ref=None):
        Q = np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        xr = np.zeros(Q.shape[0]) if x_ref is None else np.asarray(x_ref, dtype=float)
        ur = np.zeros(R.shape[0]) if u_ref is None else np.asarray(u_ref, dtype=float)
        return cls(
            value=lambda x, u: 0.5 * float((x - xr) @ Q @ (x - xr)) + 0.5 * float((u - ur) @ R @ (u - ur)),
            grad_x=lambda x, u: Q @ (x - xr),
            grad_u=lambda x, u: R @ (u - ur),
        )


@dataclass(frozen=True)
class ControlledMap:
    """``phi(x, u)`` with transpose products in the state and the control."""

    value: Callable
    vjp_x: Callable
    vjp_u: Callable

    @classmethod
    def linear(cls, A, B):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        return cls(
            value=lambda x, u: A @ x + B @ u,
            vjp_x=lambda x, u, w: A.T @ w,
            vjp_u=lambda x, u, w: B.T @ w,
        )


@dataclass(frozen=True)
class ControlledProblem:
    """``min sum_i f_i(x_i, u_i)`` s.t. ``x_{j+1} = phi(x_j, u_j)``, ``x_0`` fixed.

    ``project`` maps a control onto the admissible set; ``None`` means the
    admissible set is unset, which the control sweep rejects.  Use
    ``ControlledProblem.unconstrained`` for ``A_h = R^m``.
    """

    x0: np.ndarray
    m: int
    terms: tuple
    dynamics: ControlledMap
    project: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.terms) < 2:
            raise DimensionError("controlled problem needs n >= 1")

    @property
    def n(self):
        return len(self.terms) - 1

    @property
    def d(self):
        return self.x0.shape[0]

    @property
    def shape(self):
        return Shape.CONTROLLED

    @staticmethod
    def unconstrained(u):
        return u

    def frozen(self, u):
        """The explicit problem in ``x`` obtained by fixing the controls ``u``."""
        d = self.d
        dyn = self.dynamics
        maps = []
        for j in range(self.n):
            uj = u[j]
            maps.append(DynamicsMap(
                value=(lambda x, uj=uj: dyn.value(x, uj)),
                vjp=(lambda x, w, uj=uj: dyn.vjp_x(x, uj, w)),
            ))
        terms = []
        for i, t in enumerate(self.terms):
            ui = u[i]
            terms.append(ObjectiveTerm(
                value=(lambda x, t=t, ui=ui: t.value(x, ui)),
                grad=(lambda x, t=t, ui=ui: t.grad_x(x, ui)),
                index=i,
            ))
        return DynamicsProblem(terms=terms, dynamics=maps, d=d, shape=Shape.EXPLICIT)

    def rollout(self, u):
        x = np.empty((self.n + 1, self.d))
        x[0] = self.x0
        for j in range(self.n):
            x[j + 1] = self.dynamics.value(x[j], u[j])
        return x
