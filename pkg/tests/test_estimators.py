import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lds_id.dynamics import LdsModel, NoiseSpec, Trajectory, random_stable_matrix, replay, simulate
from lds_id.errors import DimensionError, DivergenceError, ParameterError, UnsupportedCheckError
from lds_id.estimators import (
    DataMatrices,
    L1Ball,
    SolverConfig,
    Subspace,
    Unconstrained,
    build_data_matrices,
    check_first_order_inequality,
    constrained_ls,
    ols,
    project,
    project_l1_ball,
)
from lds_id.experiments import random_subspace

from oracles import l1_projection_enumerate

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def sim_data(n, T, norm=0.7, k=None, seed=0, family="gaussian"):
    A = random_stable_matrix(n, norm, k=k, seed=seed)
    traj = simulate(LdsModel(A), NoiseSpec(family), T, seed=seed + 1)
    return A, build_data_matrices(traj)


# --- data matrices ---------------------------------------------------------


def test_data_matrices_T1():
    traj = simulate(LdsModel(0.3 * np.eye(2)), NoiseSpec(), 1, seed=3)
    d = build_data_matrices(traj)
    assert d.X.shape == (2, 1)
    np.testing.assert_array_equal(d.X[:, 0], traj.noises[0])


def test_data_matrices_scalar_hand_example():
    traj = Trajectory(states=[[0.0], [1.0], [0.5], [0.25]], noises=[[1.0], [0.0], [0.0]], A_star=[[0.5]])
    d = build_data_matrices(traj)
    np.testing.assert_array_equal(d.X, [[1.0, 0.5]])
    np.testing.assert_array_equal(d.X_tilde, [[0.5, 0.25]])
    np.testing.assert_array_equal(d.E, [[0.0, 0.0]])


def test_data_matrices_identity():
    A, d = sim_data(4, 30, seed=5)
    np.testing.assert_allclose(d.X_tilde - A @ d.X, d.E, atol=1e-14)


def test_data_matrices_too_short():
    traj = Trajectory(states=[[0.0], [1.0]], noises=[[1.0]])
    with pytest.raises(DimensionError):
        build_data_matrices(traj)


# --- OLS -------------------------------------------------------------------


def test_ols_scalar_ratio():
    d = DataMatrices(X=[[1.0, 0.5]], X_tilde=[[0.5, 0.25]])
    res = ols(d)
    assert res.A_hat[0, 0] == pytest.approx((0.5 * 1 + 0.25 * 0.5) / (1 + 0.25), abs=1e-15)
    assert res.converged and res.iterations == 0


def test_ols_noiseless_continuation_recovers_exactly():
    n, T = 4, 12
    A = random_stable_matrix(n, 0.8, seed=2)
    noises = np.zeros((T + 1, n))
    noises[0] = np.linspace(1.0, 2.0, n)  # a single kick; the Krylov sequence spans R^n
    traj = Trajectory(states=replay(A, noises), noises=noises, A_star=A)
    d = build_data_matrices(traj)
    assert np.linalg.matrix_rank(d.X) == n
    assert np.linalg.norm(ols(d).A_hat - A) <= 1e-10


def test_ols_is_local_minimum(rng):
    _, d = sim_data(5, 80, seed=8)
    res = ols(d)
    for _ in range(100):
        delta = 1e-3 * rng.standard_normal((5, 5))
        assert d.objective(res.A_hat) <= d.objective(res.A_hat + delta)


def test_ols_rank_deficient_gives_min_norm():
    # T < n: many minimizers; the minimum-norm one has rows in the row space of X^T
    _, d = sim_data(6, 3, seed=1)
    res = ols(d)
    ref = d.X_tilde @ np.linalg.pinv(d.X)
    np.testing.assert_allclose(res.A_hat, ref, atol=1e-10)
    assert d.objective(res.A_hat) == pytest.approx(0.0, abs=1e-18)


# --- projections -----------------------------------------------------------


def test_l1_projection_example():
    A = np.array([[3.0, 1.0], [0.0, 0.0]])
    oracle = l1_projection_enumerate(A.ravel(), 1.0).reshape(2, 2)
    np.testing.assert_allclose(oracle, [[1.0, 0.0], [0.0, 0.0]], atol=1e-14)
    np.testing.assert_allclose(project(L1Ball(1.0), A), [[1.0, 0.0], [0.0, 0.0]], atol=1e-14)


@settings(max_examples=200)
@given(arrays(float, st.integers(1, 6), elements=finite), st.floats(0.01, 20))
def test_l1_projection_matches_enumeration(v, r):
    np.testing.assert_allclose(project_l1_ball(v, r), l1_projection_enumerate(v, r), atol=1e-8)


def test_l1_projection_ties():
    v = np.array([2.0, 2.0, -2.0, 0.5])
    z = project_l1_ball(v, 3.0)
    np.testing.assert_allclose(z, [1.0, 1.0, -1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(z, l1_projection_enumerate(v, 3.0), atol=1e-12)


def test_subspace_coordinate_projection(rng):
    E11 = np.zeros((3, 3))
    E11[0, 0] = 1.0
    K = Subspace([E11])
    A = rng.standard_normal((3, 3))
    P = project(K, A)
    expected = np.zeros((3, 3))
    expected[0, 0] = A[0, 0]
    np.testing.assert_array_equal(P, expected)


def test_subspace_reorthonormalizes(rng):
    raw = rng.standard_normal((4, 3, 3))
    K = Subspace(raw)
    Q = K.basis.reshape(4, 9)
    np.testing.assert_allclose(Q @ Q.T, np.eye(4), atol=1e-12)
    # same span: projecting the raw basis changes nothing
    for V in raw:
        np.testing.assert_allclose(K.project(V), V, atol=1e-12)


def test_subspace_dependent_basis():
    V = np.eye(2)
    with pytest.raises(ParameterError):
        Subspace([V, 2.0 * V])
    with pytest.warns(RuntimeWarning):
        W = V.copy()
        W[0, 1] = 1e-8
        Subspace([V, W])


def test_subspace_with_offset(rng):
    off = rng.standard_normal((2, 2))
    E = np.zeros((2, 2))
    E[1, 0] = 1.0
    K = Subspace([E], offset=off)
    assert K.contains(off)
    P = K.project(np.zeros((2, 2)))
    np.testing.assert_allclose(P - off, np.where(E == 1, -off, 0.0), atol=1e-15)


def _random_set(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        return Unconstrained()
    if kind == 1:
        return L1Ball(rng.uniform(0.1, 5))
    return Subspace(rng.standard_normal((int(rng.integers(1, n * n + 1)), n, n)), offset=rng.standard_normal((n, n)))


def _random_member(rng, K, n):
    if isinstance(K, Unconstrained):
        return rng.standard_normal((n, n))
    if isinstance(K, L1Ball):
        z = rng.standard_normal(n * n)
        return (z / np.abs(z).sum() * K.radius * rng.uniform()).reshape(n, n)
    return K.offset + np.tensordot(rng.standard_normal(K.d), K.basis, axes=1)


def test_projection_optimality_and_membership():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        K = _random_set(rng, n)
        A = 3.0 * rng.standard_normal((n, n))
        P = K.project(A)
        assert K.contains(P)
        np.testing.assert_allclose(K.project(P), P, atol=1e-10)
        Z = _random_member(rng, K, n)
        assert np.linalg.norm(Z - A) >= np.linalg.norm(P - A) - 1e-10


def test_membership_iff_fixed_point():
    K = L1Ball(1.0)
    assert K.contains(np.array([[0.5, -0.5], [0.0, 0.0]]))
    assert not K.contains(np.array([[0.6, -0.5], [0.0, 0.0]]))


def test_l1_radius_must_be_positive():
    with pytest.raises(ParameterError):
        L1Ball(0.0)


# --- constrained solver ----------------------------------------------------


@pytest.mark.parametrize("rule", ["lipschitz", "backtracking"])
def test_unconstrained_matches_ols(rule):
    _, d = sim_data(5, 200, seed=4)
    res = constrained_ls(d, Unconstrained(), SolverConfig(step_rule=rule))
    assert res.converged
    assert np.linalg.norm(res.A_hat - ols(d).A_hat) <= 1e-8


def test_subspace_noiseless_exact_recovery(rng):
    n, d_dim, T = 4, 5, 40
    K = random_subspace(n, d_dim, seed=3)
    A = np.tensordot(rng.standard_normal(d_dim), K.basis, axes=1)
    A *= 0.7 / np.linalg.norm(A, 2)
    noises = np.zeros((T + 1, n))
    noises[0] = np.linspace(1.0, 2.0, n)
    data = build_data_matrices(Trajectory(states=replay(A, noises), noises=noises))
    res = constrained_ls(data, K, SolverConfig(grad_map_tol=1e-12))
    assert np.linalg.norm(res.A_hat - A) <= 1e-8


def test_l1_dominates_projected_ols():
    A, d = sim_data(10, 2000, k=10, seed=7)
    K = L1Ball(np.abs(A).sum())
    res = constrained_ls(d, K)
    assert res.converged
    assert res.objective <= d.objective(K.project(ols(d).A_hat)) + 1e-6


@pytest.mark.parametrize("rule", ["lipschitz", "backtracking"])
@pytest.mark.parametrize("kind", ["l1", "subspace", "unconstrained"])
def test_monotone_descent_and_fixed_point(rule, kind):
    A, d = sim_data(6, 150, k=8 if kind == "l1" else None, seed=11)
    K = {"l1": L1Ball(np.abs(A).sum()), "subspace": random_subspace(6, 10, seed=1), "unconstrained": Unconstrained()}[kind]
    cfg = SolverConfig(step_rule=rule)
    res = constrained_ls(d, K, cfg, record_history=True)
    h = np.asarray(res.history)
    assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))
    assert res.converged
    tol = cfg.tolerance_for(d)
    assert res.grad_map_norm <= tol
    eta = res.step
    fixed = np.linalg.norm(res.A_hat - K.project(res.A_hat - eta * d.gradient(res.A_hat)))
    assert fixed <= eta * tol * (1 + 1e-6)
    assert K.contains(res.A_hat)


def test_fixed_step_too_large_diverges():
    _, d = sim_data(3, 100, seed=2)
    with pytest.raises(DivergenceError) as ei:
        constrained_ls(d, Unconstrained(), SolverConfig(step_rule="fixed", step=10.0, max_iters=5000))
    assert ei.value.iteration > 0


def test_max_iters_reports_not_converged():
    _, d = sim_data(4, 100, seed=2)
    res = constrained_ls(d, Unconstrained(), SolverConfig(max_iters=2, grad_map_tol=1e-14))
    assert not res.converged and res.iterations == 2


@pytest.mark.parametrize("kwargs", [
    dict(max_iters=0), dict(grad_map_tol=0.0), dict(step_rule="newton"),
    dict(step_rule="fixed"), dict(backtrack_beta=1.0), dict(backtrack_c=0.0), dict(backtrack_c=0.7),
])
def test_solver_config_validation(kwargs):
    with pytest.raises(ParameterError):
        SolverConfig(**kwargs)


def test_default_tolerance_is_scale_aware():
    d = DataMatrices(X=[[1.0, 0.0]], X_tilde=[[3.0, 4.0]])
    assert SolverConfig().tolerance_for(d) == pytest.approx(1e-8 * 6.0)


# --- first-order check -----------------------------------------------------


def test_first_order_B_equal_A_hat():
    A, d = sim_data(3, 50, seed=1)
    res = ols(d)
    rep = check_first_order_inequality(res.A_hat, res.A_hat, A, d)
    assert rep.lhs == 0.0 and rep.slack >= 0 and not rep.violated


@pytest.mark.parametrize("kind", ["l1", "subspace", "unconstrained"])
def test_first_order_B_equal_A_star(kind):
    A, d = sim_data(5, 300, k=6 if kind == "l1" else None, seed=21)
    if kind == "subspace":
        K = random_subspace(5, 8, seed=2)
        A = K.project(A)
        A *= 0.7 / np.linalg.norm(A, 2)
        traj = simulate(LdsModel(A), NoiseSpec(), 300, seed=4)
        d = build_data_matrices(traj)
    else:
        K = L1Ball(np.abs(A).sum()) if kind == "l1" else Unconstrained()
    res = constrained_ls(d, K)
    for B in (A, K.project(A)):
        rep = check_first_order_inequality(res.A_hat, B, A, d)
        assert rep.slack >= -1e-6 * max(1.0, rep.lhs)
        assert not rep.violated


def test_first_order_scalar_symbolic():
    """With an exact scalar least-squares solve, slack = |p| - p where p = (a_hat-b)(a*-b) sum x^2."""
    x1, x2, e1, e2, a, b = sp.symbols("x1 x2 e1 e2 a b", real=True)
    xt1, xt2 = a * x1 + e1, a * x2 + e2
    a_hat = (xt1 * x1 + xt2 * x2) / (x1**2 + x2**2)
    sx2 = x1**2 + x2**2
    lhs = (a_hat - b) ** 2 * sx2
    inner = (a_hat - b) * (x1 * e1 + x2 * e2)
    prod = (a_hat - b) * (a - b) * sx2
    # rhs - lhs = sqrt((a-b)^2 sx2) sqrt((a_hat-b)^2 sx2) + inner - lhs; the last two cancel to -prod
    assert sp.simplify(inner - lhs + prod) == 0

    vals = {x1: 1.3, x2: -0.4, e1: 0.2, e2: -0.7, a: 0.6, b: 0.1}
    d = DataMatrices(
        X=[[1.3, -0.4]],
        X_tilde=[[float(xt1.subs(vals)), float(xt2.subs(vals))]],
        E=[[0.2, -0.7]],
    )
    ah = ols(d).A_hat
    assert ah[0, 0] == pytest.approx(float(a_hat.subs(vals)), abs=1e-14)
    p = float(prod.subs(vals))
    rep = check_first_order_inequality(ah, [[0.1]], [[0.6]], d)
    assert rep.slack == pytest.approx(abs(p) - p, abs=1e-12)
    assert rep.lhs == pytest.approx(float(lhs.subs(vals)), rel=1e-12)


def test_first_order_needs_noise():
    d = DataMatrices(X=[[1.0]], X_tilde=[[0.5]])
    with pytest.raises(UnsupportedCheckError):
        check_first_order_inequality([[0.5]], [[0.5]], [[0.5]], d)


def test_estimate_result_serializes():
    from lds_id import _jsonio
    import json

    _, d = sim_data(2, 20, seed=0)
    doc = json.loads(_jsonio.dumps(constrained_ls(d, L1Ball(1.0)).to_dict()))
    assert set(doc) >= {"A_hat", "objective", "grad_map_norm", "iterations", "converged"}
    assert len(doc["A_hat"]) == 2
