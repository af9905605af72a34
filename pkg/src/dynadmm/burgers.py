"""Viscous Burgers on ``[0, pi]`` with Lax-Friedrichs stepping.

Grid points ``x_q = q dx``, ``q = 0..m``, ``dx = pi / m``; the state vector
carries both Dirichlet endpoints (``d = m + 1``) and they stay at zero.
With ``c = dt / (2 dx)`` and ``kappa = nu dt / dx**2`` the implicit scheme is
``phi(u_{i+1}) = u_i`` where, at interior points,

    phi(w)_q = w_q - (w_{q+1} - 2 w_q + w_{q-1}) / 2
               + c (w_{q+1}**2 - w_{q-1}**2) / 2 - kappa (w_{q+1} - 2 w_q + w_{q-1}).

The endpoint rows of ``phi`` are the identity and interior stencils read
the endpoints as zero, so the endpoints decouple from the interior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .banded import Tridiagonal
from .errors import NewtonError, ParameterError
from .problem import DynamicsMap, DynamicsProblem, ObjectiveTerm, Shape

__all__ = [
    "BurgersConfig",
    "initial_profile",
    "lf_explicit_step",
    "lf_explicit_step_flux",
    "explicit_rollout",
    "lf_implicit_map",
    "implicit_residual",
    "implicit_jacobian_bands",
    "newton_implicit_rollout",
    "make_implicit_problem",
]


@dataclass(frozen=True)
class BurgersConfig:
    nu: float = 0.005
    T: float = 2.0
    m: int = 100
    dt: float = 0.1
    scheme: str = "implicit"
    rho: float = 0.1
    eta: float = 2.0

    def __post_init__(self):
        if self.m < 2:
            raise ParameterError("need at least two cells")
        if not (self.dt > 0 and self.T > 0 and self.nu >= 0):
            raise ParameterError("dt, T must be positive and nu nonnegative")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12:
            raise ParameterError(f"T = {self.T} is not a whole number of steps dt = {self.dt}")
        if self.scheme not in ("explicit", "implicit", "admm"):
            raise ParameterError(f"unknown scheme {self.scheme!r}")

    @property
    def d(self):
        return self.m + 1

    @property
    def n(self):
        return round(self.T / self.dt)

    @property
    def dx(self):
        return np.pi / self.m

    @property
    def c(self):
        return self.dt / (2.0 * self.dx)

    @property
    def kappa(self):
        return self.nu * self.dt / self.dx ** 2

    def grid(self):
        return self.dx * np.arange(self.m + 1)


def initial_profile(config):
    """``sin(x)`` on the grid with both endpoints set to exactly zero."""
    u = np.sin(config.grid())
    u[0] = u[-1] = 0.0
    return u


def _padded(w):
    # interior stencils read the pinned endpoints as zero
    p = np.array(w, dtype=float)
    p[0] = p[-1] = 0.0
    return p


def lf_explicit_step(config, u):
    """One explicit Lax-Friedrichs step (expanded form); endpoints return to zero."""
    u = _padded(u)
    c, k = config.c, config.kappa
    out = np.zeros_like(u)
    L, C, R = u[:-2], u[1:-1], u[2:]
    out[1:-1] = 0.5 * (R + L) - c * (0.5 * R * R - 0.5 * L * L) + k * (R - 2.0 * C + L)
    return out


def lf_explicit_step_flux(config, u):
    """The same step written with the Lax-Friedrichs numerical flux."""
    u = _padded(u)
    dt, dx = config.dt, config.dx
    f = 0.5 * u * u
    flux = 0.5 * (f[:-1] + f[1:]) - (dx / (2.0 * dt)) * (u[1:] - u[:-1])
    out = np.zeros_like(u)
    out[1:-1] = (u[1:-1] - (dt / dx) * (flux[1:] - flux[:-1])
                 + config.kappa * (u[2:] - 2.0 * u[1:-1] + u[:-2]))
    return out


def explicit_rollout(config, u0):
    u = np.empty((config.n + 1, config.d))
    u[0] = _padded(u0)
    for i in range(config.n):
        u[i + 1] = lf_explicit_step(config, u[i])
    return u


@numba.njit(cache=True)
def _residual_kernel(w, c, k):
    d = w.shape[0]
    out = w.copy()
    for q in range(1, d - 1):
        L = w[q - 1] if q > 1 else 0.0
        R = w[q + 1] if q < d - 2 else 0.0
        C = w[q]
        lap = R - 2.0 * C + L
        out[q] = C - 0.5 * lap + c * (0.5 * R * R - 0.5 * L * L) - k * lap
    return out


@numba.njit(cache=True)
def _bands_kernel(w, c, k):
    d = w.shape[0]
    diag = np.ones(d)
    sup = np.zeros(d - 1)
    sub = np.zeros(d - 1)
    for q in range(1, d - 1):
        diag[q] = 2.0 + 2.0 * k
    # rows 1..m-1 couple to interior neighbours only
    for q in range(1, d - 2):
        sup[q] = -0.5 + c * w[q + 1] - k
        sub[q] = -0.5 - c * w[q] - k
    return sub, diag, sup


def implicit_residual(config, w):
    """``phi(w)`` of the implicit scheme."""
    return _residual_kernel(np.asarray(w, dtype=float), config.c, config.kappa)


def implicit_jacobian_bands(config, w):
    """``(sub, diag, sup)`` diagonals of the Jacobian of ``phi`` at ``w``.

    ``sub[q]`` is entry ``(q + 1, q)`` and ``sup[q]`` entry ``(q, q + 1)``.
    """
    return _bands_kernel(np.asarray(w, dtype=float), config.c, config.kappa)


def _dense(sub, diag, sup):
    return np.diag(diag) + np.diag(sup, 1) + np.diag(sub, -1)


def _bands_tvp(sub, diag, sup, v):
    # J^T v for a tridiagonal J
    out = diag * v
    out[1:] += sup * v[:-1]
    out[:-1] += sub * v[1:]
    return out


def lf_implicit_map(config):
    """``phi`` as a DynamicsMap with analytic transpose products and Jacobian."""
    c, k = config.c, config.kappa

    def value(w):
        return _residual_kernel(np.asarray(w, dtype=float), c, k)

    def vjp(w, v):
        return _bands_tvp(*_bands_kernel(np.asarray(w, dtype=float), c, k),
                          np.asarray(v, dtype=float))

    def jacobian(w):
        return _dense(*_bands_kernel(np.asarray(w, dtype=float), c, k))

    def linearize(w):
        w = np.asarray(w, dtype=float)
        return _residual_kernel(w, c, k), Tridiagonal(*_bands_kernel(w, c, k))

    return DynamicsMap(value=value, vjp=vjp, jacobian=jacobian, linearize=linearize)


def _newton_step(config, target, guess, step, tol, max_iter):
    u = np.array(guess, dtype=float)
    F = implicit_residual(config, u) - target
    norm = float(np.max(np.abs(F)))
    for _ in range(max_iter):
        if norm <= tol:
            return u
        sub, diag, sup = implicit_jacobian_bands(config, u)
        ab = np.zeros((3, u.size))
        ab[0, 1:] = sup
        ab[1] = diag
        ab[2, :-1] = sub
        delta = scipy.linalg.solve_banded((1, 1), ab, -F)
        t = 1.0
        while True:
            trial = u + t * delta
            F_trial = implicit_residual(config, trial) - target
            n_trial = float(np.max(np.abs(F_trial)))
            if n_trial < norm or t < 1e-10:
                break
            t *= 0.5
        if not n_trial < norm:
            break
        u, F, norm = trial, F_trial, n_trial
    if norm <= tol:
        return u
    raise NewtonError(f"Newton stalled at step {step} with residual {norm:.3g}", step=step)


def newton_implicit_rollout(config, u0, tol=1e-12, max_iter=50):
    """March ``phi(u_{i+1}) = u_i`` by damped Newton with banded solves.

    Each step stops at ``||phi(u_{i+1}) - u_i||_inf <= tol``.
    """
    u = np.empty((config.n + 1, config.d))
    u[0] = np.asarray(u0, dtype=float)
    for i in range(config.n):
        u[i + 1] = _newton_step(config, u[i], u[i], i + 1, tol, max_iter)
    return u


def make_implicit_problem(config=None, u_hat0=None):
    """``min 1/2 ||u_0 - u_hat0||^2`` subject to ``phi(u_{i+1}) = u_i``.

    ``u_hat0`` defaults to :func:`initial_profile`.  The configuration's
    ``rho`` and ``eta`` are the default ADMM parameters for this instance.
    """
    cfg = BurgersConfig() if config is None else config
    target = initial_profile(cfg) if u_hat0 is None else np.asarray(u_hat0, dtype=float)
    d = cfg.d
    terms = [ObjectiveTerm.tracking([target], index=0)]
    terms += [ObjectiveTerm.zero(d, index=i) for i in range(1, cfg.n + 1)]
    return DynamicsProblem(terms=terms, dynamics=lf_implicit_map(cfg), d=d, shape=Shape.IMPLICIT)
