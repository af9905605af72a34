import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_problem
from dynadmm.errors import ParameterError, TuningError
from dynadmm.problem import DynamicsMap, DynamicsProblem, ObjectiveTerm
from dynadmm.tuning import (SmoothnessConstants, check_condition, choose_penalties,
                            constants_table, dual_bound_diagnostic, estimate_constants,
                            geometric_sums)


def _box(n, d, half=2.0):
    return -half * np.ones((n + 1, d)), half * np.ones((n + 1, d))


def _random_consts(seed, n):
    rng = np.random.default_rng(seed)
    return SmoothnessConstants(
        M_f=rng.random(), L_f=rng.random(), C_phi=rng.random(), M_phi=1.5 * rng.random(),
        L_phi=rng.random(), diameters=1 + rng.random(n + 1), rho_ref=np.ones(n),
        init_residual_sq=np.zeros(n))


def test_linear_quadratic_estimates(rng):
    d = 3
    A = rng.standard_normal((d, d))
    Q = rng.standard_normal((d, d))
    Q = Q @ Q.T + np.eye(d)
    terms = [ObjectiveTerm.quadratic(Q, index=i) for i in range(4)]
    p = DynamicsProblem(terms=terms, dynamics=DynamicsMap.from_matrix(A), d=d)
    c = estimate_constants(p, _box(3, d), samples=300, rng=rng)
    assert abs(c.M_phi - np.linalg.norm(A, 2)) <= 0.15 * np.linalg.norm(A, 2)
    assert abs(c.L_f - np.linalg.norm(Q, 2)) <= 0.15 * np.linalg.norm(Q, 2)
    assert c.L_phi <= 1e-9


def test_zero_objective_and_identity_map():
    c = estimate_constants(identity_problem(3, 2), _box(3, 2), samples=100)
    assert c.M_f == 0.0 and c.L_f == 0.0
    assert 1.0 <= c.M_phi <= 1.1
    assert c.L_phi <= 1e-12
    np.testing.assert_allclose(c.diameters, 4 * np.sqrt(2))


def test_estimate_needs_samples():
    with pytest.raises(ParameterError):
        estimate_constants(identity_problem(1, 1), _box(1, 1), samples=50)


@pytest.mark.parametrize("M", [0.0, 0.3, 0.999, 1.7])
def test_geometric_sums_match_ratio(M):
    G = geometric_sums(M, 12)
    for m in range(12):
        ratio = m if M == 1.0 else (1 - M ** m) / (1 - M)
        assert abs(G[m] - ratio) <= 1e-12 * max(G[m], 1.0)
    assert np.array_equal(geometric_sums(1.0, 5), [0, 1, 2, 3, 4])


def test_table_diagonals():
    c = SmoothnessConstants.simple(4)
    eta = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
    t = constants_table(c, np.full(4, 3.0), eta)
    for i in range(4):
        assert t.C_tilde[i, i] == 1.0 / eta[i + 1]
        assert t.B[i, i] == 1.0 / eta[i + 1]


def test_zero_contraction_collapse():
    # M_phi = 0: off-diagonal entries vanish, diagonals reduce by hand
    c = SmoothnessConstants.simple(2, M_f=2.0, L_f=3.0, M_phi=0.0, L_phi=5.0)
    eta = np.array([1.0, 2.0, 4.0])
    t = constants_table(c, [1.0, 1.0], eta)
    assert t.C[0, 0] == 2.0 * 5.0 * 1.0 + 3.0 + 0.5  # G_1 = 1
    assert t.C[1, 1] == 3.0 + 0.25                   # G_0 = 0
    assert t.C[1, 0] == 0.0 and t.C_tilde[1, 0] == 0.0


def test_diagonal_independent_of_own_penalty():
    c = SmoothnessConstants.simple(5, M_phi=0.8)
    eta = np.full(6, 0.7)
    rho = np.linspace(1, 5, 5)
    base = constants_table(c, rho, eta)
    for i in range(5):
        bumped = rho.copy()
        bumped[i] *= 17.0
        other = constants_table(c, bumped, eta)
        assert other.C[i, i] == base.C[i, i]
        # column i depends only on rho_j with j > i
        assert np.array_equal(other.C[:, i], base.C[:, i])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
def test_tilde_bounded_by_full(seed, n):
    c = _random_consts(seed, n)
    rng = np.random.default_rng(seed + 1)
    t = constants_table(c, 0.1 + 5 * rng.random(n), 0.1 + rng.random(n + 1))
    for i in range(n):
        for j in range(i, n):
            if c.M_phi > 0 or j == i:
                assert 0 < t.C_tilde[j, i] <= t.C[j, i]


def test_condition_limits():
    # off-diagonal entries grow with rho_j when M_phi > 0, so the large-penalty
    # limit is taken where they vanish
    c = SmoothnessConstants.simple(4, M_phi=0.0)
    eta = np.full(5, 2.0)
    big = np.full(4, 1e12)
    _, ok = check_condition(constants_table(c, big, eta), big, eta)
    assert ok
    tiny = np.full(4, 1e-12)
    rows, ok = check_condition(constants_table(c, tiny, eta), tiny, eta)
    assert not ok and not any(r.passed for r in rows)
    one = SmoothnessConstants.simple(1, M_phi=0.9)
    _, ok = check_condition(constants_table(one, [1e12], [1.0, 1.0]), [1e12], [1.0, 1.0])
    assert ok


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
def test_choose_penalties_certifies(seed, n):
    # certified penalties grow doubly exponentially in n unless M_phi is small
    c = _random_consts(seed, n)
    c = SmoothnessConstants(c.M_f, c.L_f, c.C_phi, 0.03 * c.M_phi, c.L_phi, c.diameters,
                            c.rho_ref, c.init_residual_sq)
    eta = 0.1 + np.random.default_rng(seed).random(n + 1)
    cert = choose_penalties(c, eta, margin=0.9, level_set_floor=False)
    assert cert.passed and cert.certified
    assert all(r.total < r.bound for r in cert.rows)
    assert np.all(cert.c > 0) and np.all(cert.c_tilde > 0)
    assert np.all(cert.rho > 2 * c.rho_ref)
    stricter = choose_penalties(c, eta, margin=0.5, level_set_floor=False)
    assert np.all(stricter.rho >= cert.rho)


def test_single_constraint_threshold():
    c = SmoothnessConstants.simple(1, L_f=2.0, M_phi=0.3)
    eta = np.array([1.0, 0.5])
    cert = choose_penalties(c, eta, margin=0.9, level_set_floor=False)
    # n = 1: C[0,0] = L_f + 1/eta_1 and the row reads 2 C^2 / rho_0 < margin / (4 eta_1)
    c00 = 2.0 + 1.0 / 0.5
    assert cert.rho[0] >= 8 * eta[1] * c00 ** 2 / 0.9
    assert 2 * c00 ** 2 / cert.rho[0] < 1 / (4 * eta[1])


def test_level_set_floor_applies():
    c = SmoothnessConstants.simple(2, M_phi=0.1, diameter=50.0)
    with_floor = choose_penalties(c, 1.0, level_set_floor=True)
    without = choose_penalties(c, 1.0, level_set_floor=False)
    assert np.all(with_floor.rho >= without.rho)
    assert np.all(with_floor.rho >= with_floor.floors)


def test_overflow_raises_with_row():
    c = SmoothnessConstants.simple(40, M_phi=3.0, L_phi=5.0)
    with pytest.raises(TuningError) as info:
        choose_penalties(c, 1.0)
    assert info.value.row is not None


def test_margin_validated():
    with pytest.raises(ParameterError):
        choose_penalties(SmoothnessConstants.simple(2), 1.0, margin=1.0)


def test_dual_bound_examples():
    c = SmoothnessConstants.simple(3, M_f=2.0, M_phi=0.5)
    t = constants_table(c, np.ones(3), np.ones(4))
    np.testing.assert_allclose(dual_bound_diagnostic(t, c, np.zeros(4)),
                               [t.G[3] * 2, t.G[2] * 2, t.G[1] * 2])
    z = SmoothnessConstants.simple(3, M_f=0.0)
    tz = constants_table(z, np.ones(3), np.ones(4))
    assert np.all(dual_bound_diagnostic(tz, z, np.zeros(4)) == 0)
    steps = np.array([0.0, 1.0, 0.0, 0.0])
    assert dual_bound_diagnostic(t, c, steps)[0] == pytest.approx(t.G[3] * 2 + t.B[0, 0])


def test_certificate_serializes():
    import json

    cert = choose_penalties(SmoothnessConstants.simple(3, M_phi=0.2), 0.5, level_set_floor=False)
    data = json.loads(json.dumps(cert.to_dict()))
    assert data["certified"] is True and len(data["rows"]) == 3


def test_box_watch_warns_once(caplog):
    from types import SimpleNamespace

    from dynadmm.tuning import BoxWatch

    watch = BoxWatch(-np.ones((2, 1)), np.ones((2, 1)))
    rec = lambda k: SimpleNamespace(iteration=k)
    assert watch(SimpleNamespace(x=np.zeros((2, 1)), record=rec(1))) is False
    assert watch.exited_at is None
    with caplog.at_level("WARNING"):
        watch(SimpleNamespace(x=np.array([[0.0], [1.5]]), record=rec(2)))
        watch(SimpleNamespace(x=np.array([[0.0], [2.5]]), record=rec(3)))
    assert watch.exited_at == 2
    assert len([r for r in caplog.records if "certificate box" in r.message]) == 1
