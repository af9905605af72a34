"""Small reference instances with independent solutions.

* a bounded, contractive least-squares instance for the Lyapunov and rate
  checks,
* a linear-quadratic instance whose KKT pair solves one linear system,
* a linear-quadratic control instance with the same kind of oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .problem import (ControlledMap, ControlledProblem, ControlTerm, DynamicsMap,
                      DynamicsProblem, ObjectiveTerm, Shape)

__all__ = [
    "synthetic_instance",
    "LqInstance",
    "lq_instance",
    "LqControlInstance",
    "lq_control_instance",
]


def _scaled(rng, d, norm):
    A = rng.standard_normal((d, d))
    return norm * A / np.linalg.norm(A, 2)


def _tanh_term(target, index):
    t = np.asarray(target, dtype=float)

    def residual(x):
        return np.tanh(x) - t

    def jac(x):
        return np.diag(1.0 - np.tanh(x) ** 2)

    return ObjectiveTerm.from_residual(residual, jac, index=index)


def _quartic_term(target, index):
    t = np.asarray(target, dtype=float)

    def residual(x):
        return np.tanh(x - t) ** 2

    def jac(x):
        th = np.tanh(x - t)
        return np.diag(2.0 * th * (1.0 - th * th))

    return ObjectiveTerm.from_residual(residual, jac, index=index)


def synthetic_instance(n=5, d=2, seed=0, contraction=0.5, degenerate=False):
    """Explicit instance with bounded least-squares terms and ``phi(x) = A tanh(x) + c``.

    ``||A||_2 = contraction`` bounds the Lipschitz constant of ``phi``.  By
    default ``f_i = 1/2 ||tanh(x) - t_i||^2`` with random targets.  With
    ``degenerate`` the targets form a feasible trajectory and
    ``f_i = 1/2 ||tanh(x - t_i)**2||^2``, so the minimum value 0 is attained
    at a point where every Hessian vanishes and convergence is sublinear.
    """
    if not 0.0 < contraction < 1.0:
        raise ParameterError("contraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    A = _scaled(rng, d, contraction)
    c = 0.5 * rng.standard_normal(d)
    targets = rng.uniform(-0.8, 0.8, (n + 1, d))
    if degenerate:
        for i in range(n):
            targets[i + 1] = A @ np.tanh(targets[i]) + c

    def value(x):
        return A @ np.tanh(x) + c

    def vjp(x, w):
        return (1.0 - np.tanh(x) ** 2) * (A.T @ w)

    def jacobian(x):
        return A * (1.0 - np.tanh(x) ** 2)

    dmap = DynamicsMap(value=value, vjp=vjp, jacobian=jacobian)
    make = _quartic_term if degenerate else _tanh_term
    terms = [make(targets[i], i) for i in range(n + 1)]
    return DynamicsProblem(terms=terms, dynamics=dmap, d=d, shape=Shape.EXPLICIT)


@dataclass(frozen=True)
class LqInstance:
    """Problem plus its KKT pair ``(x_star, lam_star)``."""

    problem: DynamicsProblem
    x_star: np.ndarray
    lam_star: np.ndarray


def _spd_factor(rng, d):
    L = rng.standard_normal((d, d))
    return L + d * np.eye(d)


def _kkt_solve(H, h, C, e):
    # [H C'; C 0] [z; lam] = [h; e]
    N, m = H.shape[0], C.shape[0]
    K = np.zeros((N + m, N + m))
    K[:N, :N] = H
    K[:N, N:] = C.T
    K[N:, :N] = C
    sol = np.linalg.solve(K, np.concatenate([h, e]))
    return sol[:N], sol[N:]


def lq_instance(n=6, d=3, seed=0, norm=0.9):
    """``f_i = 1/2 ||L_i (x - a_i)||^2`` with ``x_{j+1} = A x_j + b``.

    The KKT pair comes from one dense solve of the stacked system
    ``H x + C' lam = H a``, ``C x = e``.
    """
    rng = np.random.default_rng(seed)
    A = _scaled(rng, d, norm)
    b = rng.standard_normal(d)
    Ls = [_spd_factor(rng, d) for _ in range(n + 1)]
    anchors = rng.standard_normal((n + 1, d))
    terms = [ObjectiveTerm.from_residual((lambda x, L=L, a=a: L @ (x - a)), (lambda x, L=L: L),
                                         index=i)
             for i, (L, a) in enumerate(zip(Ls, anchors))]
    problem = DynamicsProblem(terms=terms, dynamics=DynamicsMap.from_matrix(A, b), d=d,
                              shape=Shape.EXPLICIT)
    N = (n + 1) * d
    H = np.zeros((N, N))
    h = np.zeros(N)
    for i, (L, a) in enumerate(zip(Ls, anchors)):
        s = slice(i * d, (i + 1) * d)
        H[s, s] = L.T @ L
        h[s] = L.T @ L @ a
    C = np.zeros((n * d, N))
    for j in range(n):
        C[j * d:(j + 1) * d, j * d:(j + 1) * d] = -A
        C[j * d:(j + 1) * d, (j + 1) * d:(j + 2) * d] = np.eye(d)
    z, lam = _kkt_solve(H, h, C, np.tile(b, n))
    return LqInstance(problem, z.reshape(n + 1, d), lam.reshape(n, d))


@dataclass(frozen=True)
class LqControlInstance:
    problem: ControlledProblem
    x_star: np.ndarray
    u_star: np.ndarray
    lam_star: np.ndarray


def lq_control_instance(n=8, d=2, m=1, seed=0, norm=0.9):
    """Linear dynamics ``x_{j+1} = A x_j + B u_j`` with quadratic stage costs.

    Controls are unconstrained; the oracle solves the equality-constrained
    quadratic program in ``(x_0..x_n, u_0..u_n)`` with ``x_0`` pinned.
    """
    rng = np.random.default_rng(seed)
    A = _scaled(rng, d, norm)
    B = rng.standard_normal((d, m))
    x0 = rng.standard_normal(d)
    Q = np.eye(d)
    R = 0.5 * np.eye(m)
    x_ref = 0.5 * rng.standard_normal((n + 1, d))
    terms = [ControlTerm.quadratic(Q, R, x_ref[i]) for i in range(n + 1)]
    problem = ControlledProblem(x0=x0, m=m, terms=terms, dynamics=ControlledMap.linear(A, B),
                                project=ControlledProblem.unconstrained)
    nx, nu = (n + 1) * d, (n + 1) * m
    H = np.zeros((nx + nu, nx + nu))
    h = np.zeros(nx + nu)
    for i in range(n + 1):
        sx = slice(i * d, (i + 1) * d)
        su = slice(nx + i * m, nx + (i + 1) * m)
        H[sx, sx] = Q
        H[su, su] = R
        h[sx] = Q @ x_ref[i]
    # rows: n dynamics blocks, then the pin x_0 = x0
    C = np.zeros((n * d + d, nx + nu))
    e = np.zeros(n * d + d)
    for j in range(n):
        rows = slice(j * d, (j + 1) * d)
        C[rows, j * d:(j + 1) * d] = -A
        C[rows, (j + 1) * d:(j + 2) * d] = np.eye(d)
        C[rows, nx + j * m:nx + (j + 1) * m] = -B
    C[n * d:, :d] = np.eye(d)
    e[n * d:] = x0
    z, lam = _kkt_solve(H, h, C, e)
    return LqControlInstance(problem, z[:nx].reshape(n + 1, d), z[nx:].reshape(n + 1, m),
                             lam[:n * d].reshape(n, d))
