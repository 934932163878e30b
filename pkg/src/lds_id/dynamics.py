"""Stable linear systems, trajectory simulation and stability quantities.

The model is the autonomous recursion ``x_{t+1} = A x_t + eta_{t+1}`` started
from ``x_0 = 0``.  Trajectories keep the noise draws that produced them so the
recursion can be replayed exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from lds_id.errors import DimensionError, InstabilityError, ParameterError, ResourceError

log = logging.getLogger(__name__)

NOISE_FAMILIES = ("gaussian", "rademacher", "uniform")
GAMMA_SIZE_LIMIT = 5000
_SQRT3 = np.sqrt(3.0)


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; ``seed`` may be an int or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    return A


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = _as_square(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def spectral_norm(A, tol=1e-12, max_iter=10_000) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Stops when the eigen-residual ``||M v - lam v||`` drops below ``tol * lam``,
    which bounds the error of the Rayleigh quotient by the same amount.  If the
    iteration cap is hit the SVD value is returned instead.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {A.shape}")
    if A.size == 0:
        return 0.0
    M = A.T @ A if A.shape[0] >= A.shape[1] else A @ A.T
    scale = np.max(np.abs(M))
    if scale == 0.0:
        return 0.0
    M = M / scale
    # deterministic start that is not orthogonal to generic top vectors
    v = 1.0 + np.arange(M.shape[0], dtype=float) / (7.0 * M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * lam:
            return float(np.sqrt(lam * scale))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector fell in the null space; restart from a basis vector
            v = np.zeros_like(v)
            v[np.argmax(np.diag(M))] = 1.0
            continue
        v = w / nw
    log.warning("power iteration hit the %d-step cap; falling back to SVD", max_iter)
    return float(np.linalg.norm(A, 2))


def stability_param_J(A, tol=1e-12, max_terms=1_000_000) -> float:
    """Truncated series ``sum_i ||A^i||_2`` for a strictly stable ``A``.

    Tail estimation starts only once a power norm has dropped below one; the
    tail is then extrapolated geometrically with the largest of the last five
    successive norm ratios, and summation stops when that estimate is below
    ``tol``.
    """
    A = _as_square(A)
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise InstabilityError(rho, f"J(A) diverges: spectral radius {rho:.6g} >= 1")
    n = A.shape[0]
    total = 1.0  # i = 0 term, ||I||_2
    if n == 0:
        return total
    P = np.eye(n)
    norms = [1.0]
    below_one = False
    for _ in range(1, max_terms):
        P = P @ A
        s = spectral_norm(P)
        total += s
        if s == 0.0:
            return total
        norms.append(s)
        below_one = below_one or s < 1.0
        if below_one and len(norms) >= 2:
            recent = np.asarray(norms[-6:])
            ratio = float(np.max(recent[1:] / recent[:-1]))
            if ratio < 1.0 and s * ratio / (1.0 - ratio) < tol:
                return total
    raise ParameterError(f"J(A) did not converge within {max_terms} terms (rho={rho:.6g})")


def gamma_matrix(A, T: int) -> np.ndarray:
    """Block lower-triangular Toeplitz map from stacked noises to stacked states.

    Block ``(i, j)`` equals ``A^(i-j)`` for ``i >= j`` and zero otherwise, so that
    ``vec([x_1 ... x_T]) = Gamma @ vec([eta_1 ... eta_T])``.
    """
    A = _as_square(A)
    n = A.shape[0]
    if T < 1:
        raise ParameterError("T must be >= 1")
    if T * n > GAMMA_SIZE_LIMIT:
        raise ResourceError(f"T*n = {T * n} exceeds the materialization limit {GAMMA_SIZE_LIMIT}")
    powers = np.empty((T + 1, n, n))
    powers[0] = np.eye(n)
    for lag in range(1, T):
        powers[lag] = powers[lag - 1] @ A
    powers[T] = 0.0  # stands in for the zero blocks above the diagonal
    lag = np.subtract.outer(np.arange(T), np.arange(T))
    lag[lag < 0] = T
    # blocks[i, j] = A^(i-j); reorder to (i, row, j, col) before flattening
    return powers[lag].transpose(0, 2, 1, 3).reshape(T * n, T * n)


def random_stable_matrix(n: int, target_spec_norm: float, k: Optional[int] = None, seed=0) -> np.ndarray:
    """Gaussian random matrix rescaled to spectral norm ``target_spec_norm``.

    With ``k`` given, exactly ``k`` entries (chosen uniformly without
    replacement) are nonzero.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 0.0 < target_spec_norm < 1.0:
        raise ParameterError(f"target_spec_norm must lie in (0, 1), got {target_spec_norm}")
    if k is not None and not 1 <= k <= n * n:
        raise ParameterError(f"sparsity k must lie in [1, n^2] = [1, {n * n}], got {k}")
    rng = make_rng(seed)
    if k is None or k == n * n:
        A = rng.standard_normal((n, n))
    else:
        A = np.zeros(n * n)
        idx = rng.choice(n * n, size=k, replace=False)
        A[idx] = rng.standard_normal(k)
        A = A.reshape(n, n)
    return A * (target_spec_norm / spectral_norm(A))


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean, unit-variance i.i.d. noise coordinates."""

    family: str = "gaussian"

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ParameterError(f"unknown noise family {self.family!r}; choose from {NOISE_FAMILIES}")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.family == "gaussian":
            return rng.standard_normal(shape)
        if self.family == "rademacher":
            return 2.0 * rng.integers(0, 2, size=shape).astype(float) - 1.0
        return rng.uniform(-_SQRT3, _SQRT3, size=shape)


@dataclass(frozen=True, eq=False)
class LdsModel:
    A_star: np.ndarray

    def __post_init__(self):
        A = _as_square(self.A_star).copy()
        A.setflags(write=False)
        object.__setattr__(self, "A_star", A)

    @property
    def n(self) -> int:
        return self.A_star.shape[0]

    @cached_property
    def spectral_radius(self) -> float:
        return spectral_radius(self.A_star)

    @cached_property
    def J(self) -> float:
        return stability_param_J(self.A_star)

    @property
    def is_stable(self) -> bool:
        return self.spectral_radius < 1.0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0..x_{T+1}`` (rows) and the noises ``eta_1..eta_{T+1}`` (rows)."""

    states: np.ndarray
    noises: np.ndarray
    A_star: Optional[np.ndarray] = None
    seed: Optional[int] = None
    noise_family: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        noises = np.asarray(self.noises, dtype=float)
        if states.ndim != 2 or noises.ndim != 2:
            raise DimensionError("states and noises must be 2-D (time x n)")
        if states.shape[0] < 2 or noises.shape != (states.shape[0] - 1, states.shape[1]):
            raise DimensionError(
                f"need T+2 states and T+1 noises of equal width, got {states.shape} and {noises.shape}"
            )
        for arr in (states, noises):
            arr.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "noises", noises)
        if self.A_star is not None:
            A = _as_square(self.A_star).copy()
            if A.shape[0] != states.shape[1]:
                raise DimensionError("A_star does not match the state dimension")
            A.setflags(write=False)
            object.__setattr__(self, "A_star", A)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def T(self) -> int:
        return self.states.shape[0] - 2

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "A": None if self.A_star is None else self.A_star,
            "T": self.T,
            "states": self.states,
            "noises": self.noises,
            "seed": self.seed,
            "noise_family": self.noise_family,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        known = {"n", "A", "T", "states", "noises", "seed", "noise_family"}
        states = np.asarray(d["states"], dtype=float)
        noises = np.asarray(d["noises"], dtype=float)
        n, T = int(d["n"]), int(d["T"])
        if states.shape != (T + 2, n):
            raise DimensionError(f"states shape {states.shape} inconsistent with n={n}, T={T}")
        A = d.get("A")
        return cls(
            states=states,
            noises=noises,
            A_star=None if A is None else np.asarray(A, dtype=float),
            seed=d.get("seed"),
            noise_family=d.get("noise_family"),
            extra={k: v for k, v in d.items() if k not in known},
        )


def replay(A, noises) -> np.ndarray:
    """Run the recursion from ``x_0 = 0`` with the given noise rows."""
    A = np.asarray(A, dtype=float)
    noises = np.asarray(noises, dtype=float)
    states = np.zeros((noises.shape[0] + 1, A.shape[0]))
    for t in range(noises.shape[0]):
        states[t + 1] = A @ states[t] + noises[t]
    return states


def simulate(model: LdsModel, noise: NoiseSpec, T: int, seed) -> Trajectory:
    """Simulate ``T + 1`` steps of the system, returning ``T + 2`` states."""
    if not isinstance(model, LdsModel):
        model = LdsModel(model)
    if T < 1:
        raise ParameterError("T must be >= 1")
    if not model.is_stable:
        raise InstabilityError(model.spectral_radius)
    rng = make_rng(seed)
    noises = noise.sample(rng, (T + 1, model.n))
    states = replay(model.A_star, noises)
    return Trajectory(
        states=states,
        noises=noises,
        A_star=model.A_star,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        noise_family=noise.family,
    )
