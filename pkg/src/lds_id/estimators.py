"""Least-squares estimation of the system matrix over a convex constraint set.

The objective is ``f(A) = ||X_tilde - A X||_F^2`` with ``X = [x_1 .. x_T]`` and
``X_tilde = [x_2 .. x_{T+1}]``.  OLS is solved in closed form; constrained
problems use projected gradient descent with a pluggable projection oracle.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from lds_id.dynamics import Trajectory, spectral_norm
from lds_id.errors import (
    DimensionError,
    DivergenceError,
    ParameterError,
    UnsupportedCheckError,
)

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-10


# ---------------------------------------------------------------------------
# constraint sets


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection of a vector onto ``{z : ||z||_1 <= radius}``.

    Sort-and-threshold: with ``mu`` the magnitudes sorted in decreasing order
    and ``theta_r = (sum_{i<=r} mu_i - radius) / r``, the threshold is
    ``theta_rho`` for the largest ``rho`` with ``mu_rho - theta_rho > 0``.
    """
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        raise ParameterError("radius must be positive")
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    mu = np.sort(a.ravel())[::-1]
    cssv = np.cumsum(mu)
    r = np.arange(1, mu.size + 1)
    theta = (cssv - radius) / r
    rho = np.nonzero(mu - theta > 0)[0][-1]
    return np.sign(v) * np.maximum(a - theta[rho], 0.0)


class ConstraintSet:
    """Closed convex subset of n x n matrices with a Euclidean projection."""

    def project(self, A) -> np.ndarray:
        raise NotImplementedError

    def contains(self, A, tol=MEMBERSHIP_TOL) -> bool:
        A = np.asarray(A, dtype=float)
        return bool(np.linalg.norm(self.project(A) - A) <= tol * max(1.0, np.linalg.norm(A)))

    def to_dict(self) -> dict:
        raise NotImplementedError


class Unconstrained(ConstraintSet):
    def project(self, A):
        return np.array(A, dtype=float)

    def to_dict(self):
        return {"kind": "unconstrained"}

    def __repr__(self):
        return "Unconstrained()"


class L1Ball(ConstraintSet):
    """``{A : sum |A_ij| <= radius}``."""

    def __init__(self, radius: float):
        radius = float(radius)
        if not radius > 0 or not np.isfinite(radius):
            raise ParameterError(f"L1 ball radius must be positive and finite, got {radius}")
        self.radius = radius

    def project(self, A):
        A = np.asarray(A, dtype=float)
        return project_l1_ball(A.ravel(), self.radius).reshape(A.shape)

    def to_dict(self):
        return {"kind": "l1", "radius": self.radius}

    def __repr__(self):
        return f"L1Ball(radius={self.radius!r})"


def _mgs(vectors: np.ndarray, drop_tol=1e-12, warn_tol=1e-6) -> np.ndarray:
    """Modified Gram-Schmidt on the rows of ``vectors``."""
    Q = np.array(vectors, dtype=float)
    for i in range(Q.shape[0]):
        orig = np.linalg.norm(Q[i])
        for j in range(i):
            Q[i] -= (Q[j] @ Q[i]) * Q[j]
        # second pass keeps orthogonality at round-off level
        for j in range(i):
            Q[i] -= (Q[j] @ Q[i]) * Q[j]
        nrm = np.linalg.norm(Q[i])
        if orig == 0.0 or nrm <= drop_tol * orig:
            raise ParameterError(f"subspace basis element {i} is linearly dependent on the previous ones")
        if nrm <= warn_tol * orig:
            warnings.warn(
                f"subspace basis element {i} is nearly dependent (relative residual {nrm / orig:.2e})",
                RuntimeWarning,
                stacklevel=3,
            )
        Q[i] /= nrm
    return Q


class Subspace(ConstraintSet):
    """Affine subspace ``offset + span{V_1, ..., V_d}``.

    The basis is re-orthonormalized under the trace inner product at
    construction, so callers may pass any linearly independent set.
    """

    def __init__(self, basis: Sequence, offset=None):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 3 or basis.shape[1] != basis.shape[2] or basis.shape[0] < 1:
            raise DimensionError(f"basis must have shape (d, n, n) with d >= 1, got {basis.shape}")
        d, n, _ = basis.shape
        if d > n * n:
            raise DimensionError(f"d = {d} exceeds n^2 = {n * n}")
        self.n = n
        self._Q = _mgs(basis.reshape(d, n * n))
        self._Q.setflags(write=False)
        if offset is None:
            offset = np.zeros((n, n))
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (n, n):
            raise DimensionError(f"offset must be {n}x{n}, got {offset.shape}")
        self.offset = offset

    @property
    def d(self) -> int:
        return self._Q.shape[0]

    @property
    def basis(self) -> np.ndarray:
        return self._Q.reshape(self.d, self.n, self.n)

    def coordinates(self, A) -> np.ndarray:
        return self._Q @ (np.asarray(A, dtype=float) - self.offset).ravel()

    def project(self, A):
        A = np.asarray(A, dtype=float)
        return self.offset + (self._Q.T @ self.coordinates(A)).reshape(self.n, self.n)

    def to_dict(self):
        return {"kind": "subspace", "basis": self.basis, "offset": self.offset}

    def __repr__(self):
        return f"Subspace(n={self.n}, d={self.d})"


def project(K: ConstraintSet, A) -> np.ndarray:
    """``argmin_{Z in K} ||Z - A||_F``."""
    return K.project(A)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class DataMatrices:
    X: np.ndarray
    X_tilde: np.ndarray
    E: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Xt = np.asarray(self.X_tilde, dtype=float)
        if X.ndim != 2 or X.shape != Xt.shape:
            raise DimensionError(f"X and X_tilde must be equal-shape n x T, got {X.shape} and {Xt.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "X_tilde", Xt)
        if self.E is not None:
            E = np.asarray(self.E, dtype=float)
            if E.shape != X.shape:
                raise DimensionError("E must have the same shape as X")
            object.__setattr__(self, "E", E)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    def objective(self, A) -> float:
        R = self.X_tilde - np.asarray(A, dtype=float) @ self.X
        return float(np.sum(R * R))

    def gradient(self, A) -> np.ndarray:
        return 2.0 * (np.asarray(A, dtype=float) @ self.X - self.X_tilde) @ self.X.T


def build_data_matrices(traj: Trajectory) -> DataMatrices:
    """Stack ``X = [x_1..x_T]``, ``X_tilde = [x_2..x_{T+1}]``, ``E = [eta_2..eta_{T+1}]``."""
    states = np.asarray(traj.states)
    if states.shape[0] < 3:
        raise DimensionError(f"need at least 3 states (T >= 1), got {states.shape[0]}")
    T = states.shape[0] - 2
    E = None
    if traj.noises is not None:
        E = np.asarray(traj.noises)[1:T + 1].T
    return DataMatrices(X=states[1:T + 1].T, X_tilde=states[2:T + 2].T, E=E)


# ---------------------------------------------------------------------------
# solvers


@dataclass(frozen=True)
class SolverConfig:
    """Projected-gradient settings.

    ``step_rule`` is ``"lipschitz"`` (``eta = 1 / (2 sigma_max(X)^2)``),
    ``"fixed"`` (uses ``step``) or ``"backtracking"`` (shrinks by
    ``backtrack_beta`` until a sufficient-decrease test with ``backtrack_c``
    passes, never going below the Lipschitz step).  ``grad_map_tol=None`` means ``1e-8 * (1 + ||X_tilde||_F)``.
    """

    max_iters: int = 50_000
    grad_map_tol: Optional[float] = None
    step_rule: str = "lipschitz"
    step: Optional[float] = None
    backtrack_beta: float = 0.5
    backtrack_c: float = 0.5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if self.grad_map_tol is not None and not self.grad_map_tol > 0:
            raise ParameterError("grad_map_tol must be positive")
        if self.step_rule not in ("lipschitz", "fixed", "backtracking"):
            raise ParameterError(f"unknown step rule {self.step_rule!r}")
        if self.step_rule == "fixed" and not (self.step is not None and self.step > 0):
            raise ParameterError("fixed step rule needs a positive step")
        if not 0 < self.backtrack_beta < 1:
            raise ParameterError("backtrack_beta must lie in (0, 1)")
        if not 0 < self.backtrack_c <= 0.5:
            raise ParameterError("backtrack_c must lie in (0, 0.5]")

    def tolerance_for(self, data: DataMatrices) -> float:
        if self.grad_map_tol is not None:
            return self.grad_map_tol
        return 1e-8 * (1.0 + float(np.linalg.norm(data.X_tilde)))

    def to_dict(self) -> dict:
        return {
            "max_iters": self.max_iters,
            "grad_map_tol": self.grad_map_tol,
            "step_rule": self.step_rule,
            "step": self.step,
            "backtrack_beta": self.backtrack_beta,
            "backtrack_c": self.backtrack_c,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EstimateResult:
    A_hat: np.ndarray
    objective: float
    grad_map_norm: float
    iterations: int
    converged: bool
    step: Optional[float] = None
    history: Optional[list] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "n": self.A_hat.shape[0],
            "A_hat": self.A_hat,
            "objective": self.objective,
            "grad_map_norm": self.grad_map_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "step": self.step,
        }


def ols(data: DataMatrices) -> EstimateResult:
    """Minimum-norm minimizer of ``||X_tilde - A X||_F`` (SVD cutoff ``1e-12 sigma_max``)."""
    sol, *_ = np.linalg.lstsq(data.X.T, data.X_tilde.T, rcond=1e-12)
    A_hat = sol.T
    return EstimateResult(
        A_hat=A_hat,
        objective=data.objective(A_hat),
        grad_map_norm=float(np.linalg.norm(data.gradient(A_hat))),
        iterations=0,
        converged=True,
    )


def constrained_ls(
    data: DataMatrices,
    K: ConstraintSet,
    cfg: Optional[SolverConfig] = None,
    A0=None,
    record_history: bool = False,
) -> EstimateResult:
    """Projected gradient descent on ``||X_tilde - A X||_F^2`` over ``K``.

    Stops when the gradient-mapping norm
    ``||A - P_K(A - eta grad f(A))||_F / eta`` is at most the tolerance, or
    after ``cfg.max_iters`` steps.  Raises :class:`DivergenceError` when the
    objective becomes non-finite.
    """
    cfg = cfg or SolverConfig()
    n = data.n
    tol = cfg.tolerance_for(data)
    # f(A) = c0 - 2 <A, C> + <A G, A>; gradient = 2 (A G - C)
    G = data.X @ data.X.T
    C = data.X_tilde @ data.X.T
    c0 = float(np.sum(data.X_tilde * data.X_tilde))

    def f(A):
        with np.errstate(over="ignore", invalid="ignore"):
            return c0 - 2.0 * float(np.sum(A * C)) + float(np.sum((A @ G) * A))

    def grad(A):
        return 2.0 * (A @ G - C)

    L = 2.0 * spectral_norm(data.X) ** 2
    if cfg.step_rule == "fixed":
        eta = float(cfg.step)
    else:
        eta = 1.0 / L if L > 0 else 1.0
    eta_floor = eta

    A = K.project(np.zeros((n, n)) if A0 is None else np.asarray(A0, dtype=float))
    fA = f(A)
    history = [fA] if record_history else None
    gm = np.inf
    it = 0
    converged = False
    while True:
        if not np.isfinite(fA):
            raise DivergenceError(it)
        g = grad(A)
        if cfg.step_rule == "backtracking":
            eta_try = eta / cfg.backtrack_beta
            while True:
                Z = K.project(A - eta_try * g)
                D = A - Z
                # exact change f(Z) - f(A) for a quadratic; avoids cancellation near the optimum
                change = float(np.sum((D @ G) * D)) - float(np.sum(g * D))
                if change <= -cfg.backtrack_c / eta_try * float(np.sum(D * D)) or eta_try <= eta_floor:
                    break
                # 1/L always gives sufficient decrease for c <= 1/2, so never go below it
                eta_try = max(eta_try * cfg.backtrack_beta, eta_floor)
            eta = eta_try
        else:
            Z = K.project(A - eta * g)
            D = A - Z
        gm = float(np.linalg.norm(D)) / eta
        if gm <= tol:
            converged = True
            break
        if it >= cfg.max_iters:
            break
        it += 1
        A = Z
        fA = f(A)
        if record_history:
            history.append(fA)

    if not converged:
        log.info("projected gradient stopped at max_iters=%d (grad map %.3e > %.3e)", cfg.max_iters, gm, tol)
    obj = data.objective(A)
    if not np.isfinite(obj):
        raise DivergenceError(it)
    return EstimateResult(
        A_hat=A,
        objective=obj,
        grad_map_norm=gm,
        iterations=it,
        converged=converged,
        step=eta,
        history=history,
    )


# ---------------------------------------------------------------------------
# post-hoc optimality check


@dataclass(frozen=True)
class FirstOrderReport:
    lhs: float
    rhs: float
    slack: float
    violated: bool

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "slack": self.slack, "violated": self.violated}


def check_first_order_inequality(A_hat, B, A_star, data: DataMatrices, tol_rel=1e-6) -> FirstOrderReport:
    """Evaluate ``||(A_hat-B)X||^2 <= <(A_hat-B)X, E> + ||(A*-B)X|| ||(A_hat-B)X||``.

    The inequality holds for an exact minimizer over ``K`` and any ``B`` in
    ``K``.  ``violated`` is set when ``rhs - lhs < -tol_rel * max(1, lhs)``.
    """
    if data.E is None:
        raise UnsupportedCheckError("the first-order check needs the noise matrix E")
    D = (np.asarray(A_hat, dtype=float) - np.asarray(B, dtype=float)) @ data.X
    S = (np.asarray(A_star, dtype=float) - np.asarray(B, dtype=float)) @ data.X
    lhs = float(np.sum(D * D))
    rhs = float(np.sum(D * data.E)) + float(np.linalg.norm(S)) * float(np.linalg.norm(D))
    slack = rhs - lhs
    return FirstOrderReport(lhs=lhs, rhs=rhs, slack=slack, violated=bool(slack < -tol_rel * max(1.0, lhs)))


def constraint_from_dict(d: dict) -> ConstraintSet:
    kind = d.get("kind")
    if kind == "unconstrained":
        return Unconstrained()
    if kind == "l1":
        return L1Ball(d["radius"])
    if kind == "subspace":
        return Subspace(d["basis"], d.get("offset"))
    raise ParameterError(f"unknown constraint kind {kind!r}")
