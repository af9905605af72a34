"""Lorenz-63 twin experiment: RK4 dynamics and the strong-constraint 4DVar problem."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError
from .problem import DynamicsMap, DynamicsProblem, ObjectiveTerm, Shape

__all__ = [
    "LorenzConfig",
    "FourDVarData",
    "lorenz_vector_field",
    "lorenz_jacobian",
    "rk4_step",
    "lorenz_rollout",
    "lorenz_map",
    "make_4dvar_problem",
    "admm_init_4dvar",
    "rmse",
]

TRUTH_START = (-0.5, 0.5, 20.5)


@dataclass(frozen=True)
class LorenzConfig:
    sigma: float = 10.0
    rho_l: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    T: float = 3.0
    stride: int = 30
    alpha: float = 0.1
    seed: int = 0
    truth_start: tuple = TRUTH_START
    noise_scale: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ParameterError("dt and T must be positive")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12:
            raise ParameterError(f"T = {self.T} is not a whole number of steps dt = {self.dt}")
        if self.stride < 1 or n % self.stride:
            raise ParameterError(f"observation stride {self.stride} does not divide n = {n}")

    @property
    def n(self):
        return round(self.T / self.dt)

    @property
    def params(self):
        return self.sigma, self.rho_l, self.beta


@dataclass(frozen=True)
class FourDVarData:
    """Observations at steps ``0, M, 2M, ..., n``, the background and the truth."""

    observations: np.ndarray
    background: np.ndarray
    truth: np.ndarray
    obs_index: np.ndarray


@numba.njit(cache=True)
def _field(v, s, r, b):
    out = np.empty(3)
    out[0] = s * (v[1] - v[0])
    out[1] = v[0] * (r - v[2]) - v[1]
    out[2] = v[0] * v[1] - b * v[2]
    return out


@numba.njit(cache=True)
def _field_jac(v, s, r, b):
    J = np.empty((3, 3))
    J[0, 0] = -s
    J[0, 1] = s
    J[0, 2] = 0.0
    J[1, 0] = r - v[2]
    J[1, 1] = -1.0
    J[1, 2] = -v[0]
    J[2, 0] = v[1]
    J[2, 1] = v[0]
    J[2, 2] = -b
    return J


@numba.njit(cache=True)
def _rk4(v, dt, s, r, b):
    k1 = _field(v, s, r, b)
    k2 = _field(v + 0.5 * dt * k1, s, r, b)
    k3 = _field(v + 0.5 * dt * k2, s, r, b)
    k4 = _field(v + dt * k3, s, r, b)
    return v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@numba.njit(cache=True)
def _rk4_linearize(v, dt, s, r, b):
    # tangent-linear propagation of the stage derivatives
    eye = np.eye(3)
    k1 = _field(v, s, r, b)
    K1 = _field_jac(v, s, r, b)
    v2 = v + 0.5 * dt * k1
    k2 = _field(v2, s, r, b)
    K2 = _field_jac(v2, s, r, b) @ (eye + 0.5 * dt * K1)
    v3 = v + 0.5 * dt * k2
    k3 = _field(v3, s, r, b)
    K3 = _field_jac(v3, s, r, b) @ (eye + 0.5 * dt * K2)
    v4 = v + dt * k3
    k4 = _field(v4, s, r, b)
    K4 = _field_jac(v4, s, r, b) @ (eye + dt * K3)
    val = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    J = eye + (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return val, J


@numba.njit(cache=True)
def _rk4_vjp(v, w, dt, s, r, b):
    _, J = _rk4_linearize(v, dt, s, r, b)
    return J.T @ w


@numba.njit(cache=True)
def _rollout(v0, n, dt, s, r, b):
    out = np.empty((n + 1, 3))
    out[0] = v0
    for j in range(n):
        out[j + 1] = _rk4(out[j], dt, s, r, b)
    return out


def lorenz_vector_field(v, sigma=10.0, rho_l=28.0, beta=8.0 / 3.0):
    """``(sigma (y - x), x (rho - z) - y, x y - beta z)``."""
    return _field(np.asarray(v, dtype=float), sigma, rho_l, beta)


def lorenz_jacobian(v, sigma=10.0, rho_l=28.0, beta=8.0 / 3.0):
    return _field_jac(np.asarray(v, dtype=float), sigma, rho_l, beta)


def rk4_step(field, v, dt):
    """Classical fourth-order Runge-Kutta step of ``v' = field(v)``."""
    v = np.asarray(v, dtype=float)
    k1 = field(v)
    k2 = field(v + 0.5 * dt * k1)
    k3 = field(v + 0.5 * dt * k2)
    k4 = field(v + dt * k3)
    return v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lorenz_map(config=None):
    """The RK4 step of the Lorenz system as a DynamicsMap (compiled kernels)."""
    cfg = LorenzConfig() if config is None else config
    dt = cfg.dt
    s, r, b = cfg.params
    return DynamicsMap(
        value=lambda v: _rk4(v, dt, s, r, b),
        vjp=lambda v, w: _rk4_vjp(v, w, dt, s, r, b),
        jacobian=lambda v: _rk4_linearize(v, dt, s, r, b)[1],
        linearize=lambda v: _rk4_linearize(v, dt, s, r, b),
    )


def lorenz_rollout(config, v0, n=None):
    s, r, b = config.params
    return _rollout(np.asarray(v0, dtype=float), config.n if n is None else n, config.dt, s, r, b)


def make_4dvar_problem(config=None, seed=None):
    """Observations of a seeded twin experiment and the matching problem.

    The truth starts at ``config.truth_start``; each observed state gets
    ``noise_scale`` times independent standard normal noise drawn with
    ``numpy.random.default_rng(seed).standard_normal`` (ziggurat sampler).

    Returns
    -------
    problem : DynamicsProblem
        ``f_0 = 1/2 ||v - obs_0||^2 + alpha/2 ||v - background||^2``,
        ``f_{kM} = 1/2 ||v - obs_k||^2`` and zero elsewhere.
    data : FourDVarData
    """
    cfg = LorenzConfig() if config is None else config
    seed = cfg.seed if seed is None else seed
    n, M = cfg.n, cfg.stride
    truth = lorenz_rollout(cfg, cfg.truth_start)
    idx = np.arange(0, n + 1, M)
    noise = np.random.default_rng(seed).standard_normal((idx.size, 3))
    obs = truth[idx] + cfg.noise_scale * noise
    background = obs[0].copy()
    terms = [ObjectiveTerm.zero(3, index=i) for i in range(n + 1)]
    terms[0] = ObjectiveTerm.tracking([obs[0], background], [1.0, cfg.alpha], index=0)
    for k, i in enumerate(idx[1:], start=1):
        terms[i] = ObjectiveTerm.tracking([obs[k]], index=int(i))
    problem = DynamicsProblem(terms=terms, dynamics=lorenz_map(cfg), d=3, shape=Shape.EXPLICIT)
    return problem, FourDVarData(observations=obs, background=background, truth=truth, obs_index=idx)


def admm_init_4dvar(problem, data):
    """Pin observed blocks to the data and roll forward between them; zero duals."""
    dmap = problem.dynamics
    n = problem.n
    x = np.empty((n + 1, problem.d))
    observed = dict(zip(data.obs_index.tolist(), data.observations))
    for i in range(n + 1):
        x[i] = observed[i] if i in observed else dmap(x[i - 1])
    return x, np.zeros((n, problem.d))


def rmse(x, truth):
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean((x - np.asarray(truth, dtype=float)) ** 2)))
