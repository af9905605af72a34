import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_problem, random_smooth_problem
from dynadmm.admm import (AdmmParams, block_subproblem_assemble, dual_update, initial_state,
                          solve, sweep_forward, sweep_reverse)
from dynadmm.burgers import (BurgersConfig, initial_profile, make_implicit_problem,
                             newton_implicit_rollout)
from dynadmm.errors import ConfigurationError, ParameterError, UnsupportedShapeError
from dynadmm.instances import lq_control_instance, lq_instance
from dynadmm.lagrangian import aug_lagrangian_block_gradient, augmented_lagrangian_value
from dynadmm.lorenz import LorenzConfig, admm_init_4dvar, make_4dvar_problem
from dynadmm.problem import (ControlledMap, ControlledProblem, ControlTerm, DynamicsMap,
                             DynamicsProblem, ObjectiveTerm, Shape, constraint_residuals)
from dynadmm.subsolvers import levenberg_marquardt

SHAPES = [Shape.EXPLICIT, Shape.SEMI_IMPLICIT, Shape.IMPLICIT]


def _state(p, rng):
    x = rng.standard_normal((p.n + 1, p.d))
    return initial_state(p, x, rng.standard_normal((p.n, p.d)))


def test_params_validation():
    with pytest.raises(ConfigurationError):
        AdmmParams(subsolver="bogus")
    with pytest.raises(ParameterError):
        AdmmParams(feas_tol=0.0)
    with pytest.raises(ParameterError):
        AdmmParams(rho=[1.0, -1.0]).penalties(2)


def test_boundary_blocks_have_one_coupling():
    # f = 0, phi = id: only coupling and proximal terms remain
    p = identity_problem(2, 1)
    st_ = initial_state(p, [[1.0], [2.0], [4.0]])
    prm = AdmmParams(rho=2.0, eta=1.0)
    first = block_subproblem_assemble(p, st_, prm, 0)
    last = block_subproblem_assemble(p, st_, prm, 2)
    z = np.array([0.0])
    # block 0: rho/2 (x_1 - z)^2 + (z - x_0)^2 / 2
    assert first.value(z) == pytest.approx(0.5 * 2 * 4 + 0.5 * 1)
    # block 2: rho/2 (z - x_1)^2 + (z - x_2)^2 / 2
    assert last.value(z) == pytest.approx(0.5 * 2 * 4 + 0.5 * 16)
    with pytest.raises(IndexError):
        block_subproblem_assemble(p, st_, prm, 3)


@pytest.mark.parametrize("shape", SHAPES)
def test_assembled_gradient_matches_block_gradient(rng, shape):
    p = random_smooth_problem(rng, 4, 3, shape)
    state = _state(p, rng)
    rho = 0.5 + rng.random(4)
    eta = 0.5 + rng.random(5)
    prm = AdmmParams(rho=rho, eta=eta)
    for i in range(p.n + 1):
        spec = block_subproblem_assemble(p, state, prm, i)
        for _ in range(10):
            z = rng.standard_normal(3)
            x = state.x.copy()
            x[i] = z
            want = aug_lagrangian_block_gradient(p, x, state.lam, rho, i) + (z - state.x[i]) / eta[i]
            np.testing.assert_allclose(spec.grad(z), want, rtol=1e-12, atol=1e-12)


def test_quadratic_block_solved_in_one_step(rng):
    d = 3
    L = rng.standard_normal((d, d)) + 2 * np.eye(d)
    A = 0.5 * rng.standard_normal((d, d))
    terms = [ObjectiveTerm.from_residual(lambda x, a=a: L @ (x - a), lambda x: L, index=i)
             for i, a in enumerate(rng.standard_normal((3, d)))]
    p = DynamicsProblem(terms=terms, dynamics=DynamicsMap.from_matrix(A), d=d)
    state = _state(p, rng)
    spec = block_subproblem_assemble(p, state, AdmmParams(rho=1.5, eta=0.7), 1)
    f, g, H = spec.gauss_newton(spec.x0)
    exact = spec.x0 - np.linalg.solve(H, g)
    rep = levenberg_marquardt(spec)
    np.testing.assert_allclose(rep.x, exact, rtol=1e-9, atol=1e-10)
    # the initial damping 1e-3 max(diag) leaves a few geometric clean-up steps
    assert rep.iterations <= 4


def test_lq_kkt_point_is_fixed_point():
    inst = lq_instance()
    p = inst.problem
    prm = AdmmParams(rho=5.0, eta=10.0, inner_tol=1e-13)
    state = initial_state(p, inst.x_star, inst.lam_star)
    new = sweep_forward(p, state, prm)
    assert np.max(np.abs(new.x - state.x)) <= 1e-8
    assert np.max(np.abs(new.lam - state.lam)) <= 1e-8


def test_identity_constant_is_exact_fixed_point():
    p = identity_problem(4, 2)
    x = np.tile([1.5, -2.0], (5, 1))
    new = sweep_forward(p, initial_state(p, x), AdmmParams(rho=0.3, eta=10.0))
    assert np.array_equal(new.x, x)
    assert np.array_equal(new.lam, np.zeros((4, 2)))


def test_lorenz_sweep_decreases_auglag():
    p, data = make_4dvar_problem(LorenzConfig())
    x0, lam0 = admm_init_4dvar(p, data)
    prm = AdmmParams(rho=0.3, eta=10.0)
    state = initial_state(p, x0, lam0)
    before = augmented_lagrangian_value(p, state.x, state.lam, prm.penalties(p.n))
    new = sweep_forward(p, state, prm)
    after = augmented_lagrangian_value(p, new.x, state.lam, prm.penalties(p.n))
    assert after <= before


def test_dual_update_examples():
    p = identity_problem(2, 3)
    prm = AdmmParams(rho=0.3)
    state = initial_state(p, [[0, 0, 0], [1, 0, 0], [1, 0, 0]])
    dual_update(p, state, prm, 0)
    np.testing.assert_array_equal(state.lam[0], [0.3, 0.0, 0.0])
    dual_update(p, state, prm, 1)  # feasible pair
    np.testing.assert_array_equal(state.lam[1], [0.0, 0.0, 0.0])
    with pytest.raises(IndexError):
        dual_update(p, state, prm, 2)


def test_implicit_dual_update_uses_phi_of_next():
    A = np.array([[2.0, 0.0], [0.0, 3.0]])
    p = identity_problem(1, 2, shape=Shape.IMPLICIT)
    p = DynamicsProblem(terms=p.terms, dynamics=DynamicsMap.from_matrix(A), d=2,
                        shape=Shape.IMPLICIT)
    state = initial_state(p, [[1.0, 1.0], [1.0, 1.0]])
    dual_update(p, state, AdmmParams(rho=0.5), 0)
    np.testing.assert_array_equal(state.lam[0], 0.5 * (A @ [1.0, 1.0] - [1.0, 1.0]))


def test_dual_identity_after_sweep(rng):
    p = random_smooth_problem(rng, 5, 2)
    prm = AdmmParams(rho=rng.random(5) + 0.2, eta=1.0)
    state = _state(p, rng)
    new = sweep_forward(p, state, prm)
    r = constraint_residuals(p, new.x)
    diff = new.lam - state.lam
    np.testing.assert_allclose(diff, prm.penalties(5)[:, None] * r, rtol=1e-15, atol=1e-15)


def test_shape_dispatch_guards(rng):
    imp = random_smooth_problem(rng, 2, 2, Shape.IMPLICIT)
    exp = random_smooth_problem(rng, 2, 2)
    with pytest.raises(UnsupportedShapeError):
        sweep_forward(imp, _state(imp, rng), AdmmParams())
    with pytest.raises(UnsupportedShapeError):
        sweep_reverse(exp, _state(exp, rng), AdmmParams())


def test_reverse_identity_is_relabelled_forward(rng):
    n, d = 4, 2
    targets = rng.standard_normal((n + 1, d))
    terms = [ObjectiveTerm.tracking([targets[i]], index=i) for i in range(n + 1)]
    imp = DynamicsProblem(terms=terms, dynamics=DynamicsMap.identity(d), d=d,
                          shape=Shape.IMPLICIT)
    flipped = [ObjectiveTerm.tracking([targets[n - i]], index=i) for i in range(n + 1)]
    fwd = DynamicsProblem(terms=flipped, dynamics=DynamicsMap.identity(d), d=d)
    rho = 0.5 + rng.random(n)
    eta = 0.5 + rng.random(n + 1)
    x = rng.standard_normal((n + 1, d))
    lam = rng.standard_normal((n, d))
    a = sweep_reverse(imp, initial_state(imp, x, lam), AdmmParams(rho=rho, eta=eta,
                                                                   inner_tol=1e-13))
    b = sweep_forward(fwd, initial_state(fwd, x[::-1], -lam[::-1]),
                      AdmmParams(rho=rho[::-1], eta=eta[::-1], inner_tol=1e-13))
    np.testing.assert_allclose(a.x, b.x[::-1], atol=1e-10)
    np.testing.assert_allclose(a.lam, -b.lam[::-1], atol=1e-10)


def test_newton_solution_is_reverse_fixed_point():
    cfg = BurgersConfig(dt=0.1, m=40)
    p = make_implicit_problem(cfg)
    x = newton_implicit_rollout(cfg, initial_profile(cfg))
    prm = AdmmParams(rho=0.1, eta=2.0, inner_tol=1e-12)
    st0 = initial_state(p, x)
    new = sweep_reverse(p, st0, prm)
    assert np.max(np.abs(new.x - x)) <= 1e-6
    before = augmented_lagrangian_value(p, x, st0.lam, prm.penalties(p.n))
    after = augmented_lagrangian_value(p, new.x, st0.lam, prm.penalties(p.n))
    assert after <= before


def test_control_blocks_fixed_when_decoupled(rng):
    d, m, n = 2, 1, 3
    A = 0.5 * rng.standard_normal((d, d))
    terms = [ControlTerm.quadratic(np.eye(d), np.zeros((m, m)), rng.standard_normal(d))
             for _ in range(n + 1)]
    p = ControlledProblem(x0=rng.standard_normal(d), m=m, terms=terms,
                          dynamics=ControlledMap.linear(A, np.zeros((d, m))),
                          project=ControlledProblem.unconstrained)
    u = rng.standard_normal((n + 1, m))
    state = initial_state(p, u)
    _, recs = solve(p, u, params=AdmmParams(rho=1.0, eta=1.0, max_iter=3))
    new, _ = solve(p, u, params=AdmmParams(rho=1.0, eta=1.0, max_iter=1))
    np.testing.assert_allclose(new.u, state.u, atol=1e-12)
    assert len(recs) == 3


def test_control_requires_projection():
    inst = lq_control_instance(n=3)
    p = inst.problem
    bare = ControlledProblem(x0=p.x0, m=p.m, terms=p.terms, dynamics=p.dynamics)
    with pytest.raises(ConfigurationError):
        solve(bare, None, params=AdmmParams(max_iter=1))


def test_lq_control_converges_to_kkt():
    inst = lq_control_instance()
    prm = AdmmParams(rho=5.0, eta=10.0, xi=10.0, max_iter=3000, kkt_tol=1e-7, feas_tol=1e-8,
                     inner_tol=1e-12)
    state, recs = solve(inst.problem, None, params=prm)
    assert np.max(np.abs(state.x - inst.x_star)) <= 1e-4
    assert np.max(np.abs(state.u - inst.u_star)) <= 1e-4
    # the first composite sweep does not raise the augmented Lagrangian
    assert recs[0].descent_gap <= 1e-10 * (1 + abs(recs[0].auglag))


def test_lq_solve_stops_on_kkt():
    inst = lq_instance()
    prm = AdmmParams(rho=5.0, eta=10.0, kkt_tol=1e-7, feas_tol=1e-9, inner_tol=1e-12,
                     max_iter=5000)
    state, recs = solve(inst.problem, np.zeros((7, 3)), params=prm)
    assert state.status == "kkt"
    assert recs[-1].kkt_stat <= 1e-6
    assert np.max(np.abs(state.x - inst.x_star)) <= 1e-4


def test_feasibility_alone_stops_when_other_tests_disabled():
    inst = lq_instance()
    prm = AdmmParams(rho=5.0, eta=10.0, kkt_tol=None, step_tol=None, feas_tol=1e-4,
                     inner_tol=1e-12, max_iter=5000)
    state, recs = solve(inst.problem, np.zeros((7, 3)), params=prm)
    assert state.status == "feas"
    assert recs[-1].constraint_inf <= 1e-4
    assert all(r.constraint_inf > 1e-4 for r in recs[:-1])
    # all three disabled: only the cap ends the run
    off = AdmmParams(rho=5.0, eta=10.0, kkt_tol=None, step_tol=None, feas_tol=None, max_iter=7)
    state, recs = solve(inst.problem, np.zeros((7, 3)), params=off)
    assert state.status == "max_iter" and len(recs) == 7


def test_max_iter_zero_returns_initialization(rng):
    p = random_smooth_problem(rng, 3, 2)
    x0 = rng.standard_normal((4, 2))
    state, recs = solve(p, x0, params=AdmmParams(max_iter=0))
    assert recs == []
    assert np.array_equal(state.x, x0)
    assert state.status == "max_iter"


def test_callback_stops_run(rng):
    p = random_smooth_problem(rng, 3, 2)
    state, recs = solve(p, np.zeros((4, 2)), params=AdmmParams(max_iter=50),
                        callback=lambda s: s.iteration == 4)
    assert len(recs) == 4 and state.status == "callback"


def test_runs_are_bitwise_deterministic(rng):
    p = random_smooth_problem(rng, 4, 3, Shape.SEMI_IMPLICIT)
    x0 = rng.standard_normal((5, 3))
    prm = AdmmParams(rho=1.0, eta=0.5, max_iter=20)
    _, a = solve(p, x0, params=prm)
    _, b = solve(p, x0, params=prm)
    assert [r.csv_row() for r in a] == [r.csv_row() for r in b]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(SHAPES))
def test_primal_sweep_descent(seed, shape):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    p = random_smooth_problem(rng, n, d, shape)
    prm = AdmmParams(rho=0.2 + 2 * rng.random(n), eta=0.2 + 2 * rng.random(n + 1), max_iter=8,
                     step_tol=None, kkt_tol=None)
    _, recs = solve(p, rng.standard_normal((n + 1, d)), rng.standard_normal((n, d)), prm)
    for rec in recs:
        assert rec.descent_gap <= 1e-10 * (1 + abs(rec.auglag_primal))
