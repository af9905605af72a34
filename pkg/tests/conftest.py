import numpy as np
import pytest

from dynadmm.problem import DynamicsMap, DynamicsProblem, ObjectiveTerm, Shape


def identity_problem(n, d, terms=None, shape=Shape.EXPLICIT):
    terms = terms if terms is not None else [ObjectiveTerm.zero(d, index=i) for i in range(n + 1)]
    return DynamicsProblem(terms=terms, dynamics=DynamicsMap.identity(d), d=d, shape=shape)


def random_smooth_problem(rng, n, d, shape=Shape.EXPLICIT):
    """Tracking terms and ``phi(x) = A sin(x) + b``; semi-implicit gets random ``A_j``."""
    A = rng.standard_normal((d, d)) / np.sqrt(d)
    b = rng.standard_normal(d)
    dmap = DynamicsMap(value=lambda x: A @ np.sin(x) + b,
                       vjp=lambda x, w: np.cos(x) * (A.T @ w),
                       jacobian=lambda x: A * np.cos(x))
    terms = [ObjectiveTerm.tracking([rng.standard_normal(d)], [0.5 + rng.random()], index=i)
             for i in range(n + 1)]
    mats = None
    if shape is Shape.SEMI_IMPLICIT:
        mats = [np.eye(d) + 0.3 * rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(n)]
    return DynamicsProblem(terms=terms, dynamics=dmap, d=d, shape=shape, matrices=mats)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
