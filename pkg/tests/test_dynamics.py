import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lds_id import _jsonio
from lds_id.dynamics import (
    LdsModel,
    NoiseSpec,
    Trajectory,
    gamma_matrix,
    random_stable_matrix,
    replay,
    simulate,
    spectral_norm,
    spectral_radius,
    stability_param_J,
)
from lds_id.errors import DimensionError, InstabilityError, ParameterError, ResourceError

from oracles import explicit_J


def random_diagonalizable(rng, n, rho_max=0.9):
    """``V diag(lam) V^-1`` with real eigenvalues of modulus below ``rho_max``."""
    lam = rng.uniform(-rho_max, rho_max, n)
    V = rng.standard_normal((n, n)) + 2.0 * np.eye(n)
    return V @ np.diag(lam) @ np.linalg.inv(V)


# --- spectral radius -------------------------------------------------------


def test_spectral_radius_examples():
    assert spectral_radius(np.zeros((4, 4))) == 0.0
    assert spectral_radius(0.9 * np.eye(3)) == pytest.approx(0.9, abs=1e-15)
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert spectral_radius(nil) == 0.0
    assert np.linalg.norm(nil, 2) == 1.0


def test_spectral_radius_rejects_non_square():
    with pytest.raises(DimensionError):
        spectral_radius(np.zeros((2, 3)))


def test_spectral_radius_complex_pair():
    R = 0.8 * np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
    assert spectral_radius(R) == pytest.approx(0.8, abs=1e-12)


@pytest.mark.parametrize("shape", [(5, 5), (3, 40), (40, 3), (1, 1)])
def test_spectral_norm_matches_svd(rng, shape):
    for _ in range(20):
        A = rng.standard_normal(shape)
        assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-11)


def test_spectral_norm_degenerate_top_singular_value():
    Q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((6, 6)))
    A = Q @ np.diag([2.0, 2.0, 2.0 - 1e-9, 1.0, 0.5, 0.0]) @ Q.T
    assert spectral_norm(A) == pytest.approx(2.0, rel=1e-11)


# --- J ---------------------------------------------------------------------


def test_J_zero_matrix():
    assert stability_param_J(np.zeros((5, 5))) == 1.0


@pytest.mark.parametrize("a", [0.1, 0.5, 0.9])
def test_J_scaled_identity_is_geometric(a):
    assert stability_param_J(a * np.eye(3)) == pytest.approx(1.0 / (1.0 - a), abs=1e-10)


def test_J_nilpotent():
    assert stability_param_J(np.array([[0.0, 1.0], [0.0, 0.0]])) == 2.0


def test_J_matches_explicit_partial_sums(rng):
    # rho <= 0.8 keeps the 200-term reference itself converged
    for _ in range(10):
        A = random_diagonalizable(rng, 4, rho_max=0.8)
        assert stability_param_J(A) == pytest.approx(explicit_J(A, 200), abs=1e-8)


def test_J_with_transient_growth():
    # ||A|| > 1 although rho < 1: early power norms exceed one
    A = np.array([[0.5, 4.0], [0.0, 0.5]])
    assert np.linalg.norm(A, 2) > 1
    assert stability_param_J(A) == pytest.approx(explicit_J(A, 400), abs=1e-8)


def test_J_rejects_unstable():
    with pytest.raises(InstabilityError) as ei:
        stability_param_J(1.1 * np.eye(2))
    assert ei.value.rho == pytest.approx(1.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_J_dominates_norm_and_truncation_is_tight(n, norm, seed):
    A = random_stable_matrix(n, norm, seed=seed)
    J = stability_param_J(A)
    assert J >= max(1.0, np.linalg.norm(A, 2)) - 1e-12
    # doubling the explicit truncation length changes nothing beyond tol
    m = 1
    while np.linalg.norm(np.linalg.matrix_power(A, m), 2) > 1e-16 and m < 4000:
        m *= 2
    assert J == pytest.approx(explicit_J(A, 2 * m), abs=1e-9)


# --- simulation ------------------------------------------------------------


def test_simulate_zero_matrix_states_are_noises():
    traj = simulate(LdsModel(np.zeros((3, 3))), NoiseSpec(), 10, seed=4)
    np.testing.assert_array_equal(traj.states[1:], traj.noises)
    np.testing.assert_array_equal(traj.states[0], 0.0)


def test_scalar_hand_recursion():
    states = replay(np.array([[0.5]]), np.array([[1.0], [0.0], [0.0]]))
    np.testing.assert_array_equal(states.ravel(), [0.0, 1.0, 0.5, 0.25])


def test_simulate_shapes_and_recursion(rng):
    A = random_stable_matrix(4, 0.8, seed=1)
    traj = simulate(LdsModel(A), NoiseSpec("rademacher"), 50, seed=9)
    assert traj.states.shape == (52, 4)
    assert traj.noises.shape == (51, 4)
    assert traj.T == 50 and traj.n == 4
    for t in range(51):
        np.testing.assert_array_equal(traj.states[t + 1], A @ traj.states[t] + traj.noises[t])
    np.testing.assert_array_equal(replay(A, traj.noises), traj.states)


def test_simulate_rejects_unstable_and_bad_T():
    with pytest.raises(InstabilityError):
        simulate(LdsModel(np.diag([1.0, 0.2])), NoiseSpec(), 5, seed=0)
    with pytest.raises(ParameterError):
        simulate(LdsModel(np.zeros((2, 2))), NoiseSpec(), 0, seed=0)


@given(st.integers(0, 2**63 - 1), st.sampled_from(["gaussian", "rademacher", "uniform"]))
def test_seed_determinism(seed, family):
    A = 0.5 * np.eye(2)
    t1 = simulate(LdsModel(A), NoiseSpec(family), 20, seed=seed)
    t2 = simulate(LdsModel(A), NoiseSpec(family), 20, seed=seed)
    np.testing.assert_array_equal(t1.states, t2.states)


def test_gamma_factorization(rng):
    for n, T in [(1, 5), (3, 7), (4, 8), (2, 30)]:
        A = random_stable_matrix(n, 0.9, seed=n * T)
        traj = simulate(LdsModel(A), NoiseSpec(), T, seed=T)
        X = traj.states[1:T + 1]              # rows x_1..x_T
        xi = traj.noises[:T].ravel()          # eta_1..eta_T stacked
        G = gamma_matrix(A, T)
        assert np.linalg.norm(X.ravel() - G @ xi) <= 1e-10


def test_gamma_matrix_examples():
    np.testing.assert_array_equal(gamma_matrix(np.ones((3, 3)) * 0.1, 1), np.eye(3))
    np.testing.assert_array_equal(gamma_matrix(np.zeros((2, 2)), 3), np.eye(6))
    A = np.array([[0.2, 0.1], [0.0, 0.3]])
    G = gamma_matrix(A, 3)
    np.testing.assert_allclose(G[4:6, 0:2], A @ A)
    np.testing.assert_array_equal(G[0:2, 2:4], 0.0)


def test_gamma_norm_bounded_by_J(rng):
    for seed in range(5):
        A = random_stable_matrix(4, 0.9, seed=seed)
        assert np.linalg.norm(gamma_matrix(A, 8), 2) <= stability_param_J(A) + 1e-10


def test_gamma_matrix_size_guard():
    with pytest.raises(ResourceError):
        gamma_matrix(np.zeros((10, 10)), 501)


# --- random matrices and noise ---------------------------------------------


def test_random_stable_matrix_norm():
    A = random_stable_matrix(3, 0.5, seed=11)
    assert np.linalg.norm(A, 2) == pytest.approx(0.5, abs=1e-12)


def test_random_stable_matrix_sparsity():
    A = random_stable_matrix(10, 0.9, k=10, seed=5)
    assert np.count_nonzero(A) == 10
    assert spectral_radius(A) <= np.linalg.norm(A, 2) < 1.0
    dense = random_stable_matrix(4, 0.9, k=16, seed=5)
    assert np.count_nonzero(dense) == 16


def test_random_stable_matrix_reproducible():
    np.testing.assert_array_equal(random_stable_matrix(5, 0.3, k=7, seed=2), random_stable_matrix(5, 0.3, k=7, seed=2))


@pytest.mark.parametrize("kwargs", [dict(target_spec_norm=1.0), dict(target_spec_norm=0.0), dict(k=0), dict(k=17)])
def test_random_stable_matrix_rejects(kwargs):
    args = dict(n=4, target_spec_norm=0.5, seed=0)
    args.update(kwargs)
    with pytest.raises(ParameterError):
        random_stable_matrix(**args)


@pytest.mark.parametrize("family", ["gaussian", "rademacher", "uniform"])
def test_noise_moments(family):
    m = 1_000_000
    x = NoiseSpec(family).sample(np.random.Generator(np.random.Philox(1)), m)
    # 3-sigma bands; the second moment has variance (mu4 - 1)/m
    mu4 = {"gaussian": 3.0, "rademacher": 1.0, "uniform": 1.8}[family]
    assert abs(x.mean()) <= 3.0 / np.sqrt(m)
    assert abs(np.mean(x * x) - 1.0) <= 3.0 * np.sqrt((mu4 - 1.0) / m) + 1e-12


def test_noise_family_supports():
    rng = np.random.Generator(np.random.Philox(0))
    r = NoiseSpec("rademacher").sample(rng, 1000)
    assert set(np.unique(r)) == {-1.0, 1.0}
    u = NoiseSpec("uniform").sample(rng, 1000)
    assert np.all(np.abs(u) <= np.sqrt(3.0))
    with pytest.raises(ParameterError):
        NoiseSpec("cauchy")


def test_model_properties():
    m = LdsModel(0.5 * np.eye(2))
    assert m.n == 2
    assert m.spectral_radius == pytest.approx(0.5)
    assert m.J == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(ValueError):
        m.A_star[0, 0] = 1.0
    with pytest.raises(DimensionError):
        LdsModel(np.zeros((2, 3)))


def test_trajectory_json_roundtrip(tmp_path):
    traj = simulate(LdsModel(random_stable_matrix(3, 0.7, seed=1)), NoiseSpec(), 6, seed=42)
    path = tmp_path / "t.json"
    _jsonio.dump(traj.to_dict(), path)
    raw = json.loads(path.read_text())
    assert set(raw) == {"n", "A", "T", "states", "noises", "seed", "noise_family"}
    assert raw["n"] == 3 and raw["T"] == 6 and raw["seed"] == 42 and raw["noise_family"] == "gaussian"
    back = Trajectory.from_dict(raw)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.noises, traj.noises)
    np.testing.assert_array_equal(back.A_star, traj.A_star)
    # row-major layout
    assert raw["A"][0][1] == traj.A_star[0, 1]
