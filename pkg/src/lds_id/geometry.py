"""Complexity quantities for the error bounds: widths, gamma-functional bounds, beta.

Every closed-form bound here carries unit constants.  The true quantities are
only known up to absolute (or noise-dependent) constants, so reports mark
them as approximate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from lds_id.dynamics import make_rng, stability_param_J
from lds_id.errors import IntegrationError, ParameterError


def beta(n: int, k: int) -> float:
    """``sqrt(k ln(n^2 / k) + k)``, the width scale of the l1 descent cone."""
    if n < 1 or not 1 <= k <= n * n:
        raise ParameterError(f"need 1 <= k <= n^2, got n={n}, k={k}")
    return math.sqrt(k * math.log(n * n / k) + k)


def gamma_bounds_subspace(d: int):
    """``(gamma_1, gamma_2)`` bounds ``(d, sqrt(d))`` for a d-dimensional subspace."""
    if d < 1:
        raise ParameterError("d must be >= 1")
    return float(d), math.sqrt(d)


def gamma1_bound_l1(n: int, k: int) -> float:
    """``n beta (ln(n / beta) + 1)`` with the log clamped at zero."""
    b = beta(n, k)
    return n * b * (max(math.log(n / b), 0.0) + 1.0)


def dudley_gamma_bound(
    covering_log_fn: Callable[[float], float],
    diameter: float,
    alpha: int = 2,
    points: Optional[Sequence[float]] = None,
) -> float:
    """Entropy integral ``int_0^diam (log N(eps))^(1/alpha) d eps`` with unit constant.

    ``covering_log_fn`` maps a radius to a bound on the log covering number.
    ``points`` marks kinks (regime switches) so the quadrature can split there.
    """
    if alpha not in (1, 2):
        raise ParameterError("alpha must be 1 or 2")
    if not diameter > 0:
        raise ParameterError("diameter must be positive")

    def integrand(eps):
        v = covering_log_fn(eps)
        if v < 0:
            raise ParameterError(f"log covering number must be nonnegative, got {v} at eps={eps}")
        return v if alpha == 1 else math.sqrt(v)

    pts = None
    if points:
        pts = sorted(p for p in points if 0 < p < diameter) or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(integrand, 0.0, diameter, epsrel=1e-6, epsabs=0.0, limit=500, points=pts)
        except integrate.IntegrationWarning as exc:
            raise IntegrationError(f"entropy integral did not converge: {exc}") from exc
    if not math.isfinite(val):
        raise IntegrationError("entropy integral is not finite")
    return float(val)


def subspace_log_covering(d: int):
    """``d ln(3 / eps)`` for ``eps <= 1`` and 0 beyond (unit ball of a d-dim space)."""

    def fn(eps):
        return d * math.log(3.0 / eps) if eps <= 1.0 else 0.0

    return fn


def sparse_log_covering(n: int, k: int):
    """``min(beta^2 / eps^2, n^2 ln(12 / eps))`` for the l1 descent cone on the sphere."""
    b2 = beta(n, k) ** 2

    def fn(eps):
        return min(b2 / eps**2, n * n * math.log(12.0 / eps))

    return fn


def theorem1_bound(J, g2F, g2S, g1S, T, delta, bias=0.0):
    """Sample-size threshold and Frobenius error bound with unit constants.

    Returns ``(T_min, error_bound)`` where
    ``T_min = J^4 max(g2S^2, ln^2(1/delta))`` and
    ``error_bound = J ((ln(1/delta) + g2F)/sqrt(T) + g1S/T) + J^2 bias``.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if T <= 0:
        raise ParameterError("T must be positive")
    for name, v in (("J", J), ("g2F", g2F), ("g2S", g2S), ("g1S", g1S), ("bias", bias)):
        if v < 0:
            raise ParameterError(f"{name} must be nonnegative")
    L = math.log(1.0 / delta)
    T_min = J**4 * max(g2S**2, L**2)
    err = J * ((L + g2F) / math.sqrt(T) + g1S / T) + J**2 * bias
    return T_min, err


# ---------------------------------------------------------------------------
# tangent cones and Gaussian widths


@dataclass(frozen=True)
class SubspaceCone:
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError("d must be >= 1")


@dataclass(frozen=True, eq=False)
class L1DescentCone:
    """Tangent cone of the ball ``{||Z||_1 <= ||A||_1}`` at a sparse ``A``.

    ``support`` holds flat (row-major) indices into the ``n*n`` entries.
    """

    n: int
    k: int
    support: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int).ravel()
        signs = np.asarray(self.signs, dtype=float).ravel()
        if not 1 <= self.k <= self.n * self.n:
            raise ParameterError(f"need 1 <= k <= n^2, got k={self.k}")
        if support.size != self.k or len(set(support.tolist())) != self.k:
            raise ParameterError("support must contain exactly k distinct indices")
        if support.min() < 0 or support.max() >= self.n * self.n:
            raise ParameterError("support index out of range")
        if signs.shape != support.shape or np.any(np.abs(signs) != 1.0):
            raise ParameterError("signs must be +-1 on the support")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def from_matrix(cls, A) -> "L1DescentCone":
        a = np.asarray(A, dtype=float).ravel()
        supp = np.flatnonzero(a)
        n = int(round(math.sqrt(a.size)))
        return cls(n=n, k=supp.size, support=supp, signs=np.sign(a[supp]))

    @property
    def off_support(self) -> np.ndarray:
        mask = np.ones(self.n * self.n, dtype=bool)
        mask[self.support] = False
        return mask


def _descent_threshold(on: np.ndarray, off_abs: np.ndarray, k: int, tol=1e-10) -> np.ndarray:
    """Minimizer ``t >= 0`` of ``sum (on - t)^2 + sum (|off| - t)_+^2``, row-wise.

    ``on`` holds the sign-aligned on-support coordinates.  The derivative
    ``k t - sum(on) - sum (|off| - t)_+`` is increasing in ``t``, so bisection
    on its sign converges to the unique root.
    """
    s_on = on.sum(axis=1)
    lo = np.zeros(on.shape[0])
    top = off_abs.max(axis=1) if off_abs.shape[1] else np.zeros(on.shape[0])
    hi = np.maximum(top, np.maximum(s_on, 0.0) / k) + 1.0

    def deriv(t):
        return k * t - s_on - np.maximum(off_abs - t[:, None], 0.0).sum(axis=1)

    active = deriv(lo) < 0  # otherwise t* = 0
    lo_a, hi_a = lo[active], hi[active]
    on_a, off_a, s_a = on[active], off_abs[active], s_on[active]
    while lo_a.size and np.max(hi_a - lo_a) > tol:
        mid = 0.5 * (lo_a + hi_a)
        dm = k * mid - s_a - np.maximum(off_a - mid[:, None], 0.0).sum(axis=1)
        neg = dm < 0
        lo_a = np.where(neg, mid, lo_a)
        hi_a = np.where(neg, hi_a, mid)
    t = np.zeros(on.shape[0])
    t[active] = 0.5 * (lo_a + hi_a)
    return t


def project_descent_cone(cone: L1DescentCone, G) -> np.ndarray:
    """Euclidean projection of ``G`` (vectors of length ``n*n``, stacked in rows) onto the cone.

    Uses the polar decomposition: the polar cone is generated by the
    subdifferential of the l1 norm, ``{t z : z_S = signs, |z_off| <= 1}``, and
    ``P_cone(g) = g - P_polar(g)``.  Off the support the result is the soft
    threshold of ``g`` at ``t``; on the support it is ``g - t * signs``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    off = cone.off_support
    on = G[:, cone.support] * cone.signs
    t = _descent_threshold(on, np.abs(G[:, off]), cone.k)
    P = np.empty_like(G)
    P[:, cone.support] = G[:, cone.support] - t[:, None] * cone.signs
    Goff = G[:, off]
    P[:, off] = np.sign(Goff) * np.maximum(np.abs(Goff) - t[:, None], 0.0)
    return P


def gaussian_width_mc(cone, samples: int, seed=0, batch: int = 4096):
    """Monte-Carlo Gaussian width of ``cone ∩ unit sphere``.

    For each standard Gaussian ``G`` the supremum of ``<G, u>`` over unit-norm
    cone members equals ``||P_cone(G)||_F``.  Returns ``(mean, std_err)``.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    rng = make_rng(seed)
    vals = np.empty(samples)
    if isinstance(cone, SubspaceCone):
        # the projection onto a d-dim subspace has the law of a d-dim Gaussian
        vals[:] = np.linalg.norm(rng.standard_normal((samples, cone.d)), axis=1)
    elif isinstance(cone, L1DescentCone):
        N = cone.n * cone.n
        for start in range(0, samples, batch):
            stop = min(start + batch, samples)
            G = rng.standard_normal((stop - start, N))
            vals[start:stop] = np.linalg.norm(project_descent_cone(cone, G), axis=1)
    else:
        raise ParameterError(f"unsupported cone descriptor {type(cone).__name__}")
    std_err = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return float(vals.mean()), std_err


# ---------------------------------------------------------------------------
# report


@dataclass
class ComplexityReport:
    scenario: str
    n: int
    J: float
    gamma2_frob_bound: float
    gamma2_spec_bound: float
    gamma1_spec_bound: float
    delta: float
    T_min: float
    error_bounds: dict = field(default_factory=dict)
    beta: Optional[float] = None
    d: Optional[int] = None
    k: Optional[int] = None
    width_mc: Optional[tuple] = None
    J_exact: bool = False
    # subspaces: once T >= T_min >= d the d/T term is dominated by sqrt(d/T) and is dropped
    gamma1_in_bound: bool = True

    def error_bound(self, T, delta=None) -> float:
        return theorem1_bound(
            self.J, self.gamma2_frob_bound, self.gamma2_spec_bound,
            self.gamma1_spec_bound if self.gamma1_in_bound else 0.0,
            T, self.delta if delta is None else delta,
        )[1]

    def to_dict(self) -> dict:
        def approx(v):
            return {"value": v, "approx": True}

        out = {
            "scenario": self.scenario,
            "n": self.n,
            "d": self.d,
            "k": self.k,
            "delta": self.delta,
            "J": {"value": self.J, "approx": False} if self.J_exact else approx(self.J),
            "gamma2_frob_bound": approx(self.gamma2_frob_bound),
            "gamma2_spec_bound": approx(self.gamma2_spec_bound),
            "gamma1_spec_bound": approx(self.gamma1_spec_bound),
            "beta": None if self.beta is None else approx(self.beta),
            "T_min": approx(self.T_min),
            "gamma1_in_bound": self.gamma1_in_bound,
            "error_bound": [
                {"T": T, "value": v, "approx": True} for T, v in sorted(self.error_bounds.items())
            ],
        }
        if self.width_mc is not None:
            mean, se, m = self.width_mc
            out["width_mc"] = {"mean": mean, "std_err": se, "samples": m, "approx": True}
        return out


def complexity_report(
    scenario: str,
    n: int,
    delta: float,
    T_list: Sequence[int] = (),
    d: Optional[int] = None,
    k: Optional[int] = None,
    A_star=None,
    width_samples: int = 0,
    seed=0,
) -> ComplexityReport:
    """Assemble the bound quantities for a subspace (``d``) or sparse (``k``) scenario.

    ``J`` is computed from ``A_star`` when supplied and set to 1 otherwise.
    For the sparse scenario with ``A_star`` the Monte-Carlo width uses the
    actual support and signs; without it a leading-entry support is used.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    J = 1.0 if A_star is None else stability_param_J(A_star)
    b = None
    width = None
    if scenario == "subspace":
        if d is None:
            raise ParameterError("subspace scenario needs d")
        if not 1 <= d <= n * n:
            raise ParameterError(f"need 1 <= d <= n^2, got d={d}")
        g1, g2 = gamma_bounds_subspace(d)
        cone = SubspaceCone(d)
    elif scenario == "sparse":
        if A_star is not None:
            cone = L1DescentCone.from_matrix(A_star)
            k = cone.k
        elif k is None:
            raise ParameterError("sparse scenario needs k or A_star")
        else:
            cone = L1DescentCone(n=n, k=k, support=np.arange(k), signs=np.ones(k))
        b = beta(n, k)
        g2 = b
        g1 = gamma1_bound_l1(n, k)
    else:
        raise ParameterError(f"unknown scenario {scenario!r}")
    if width_samples:
        mean, se = gaussian_width_mc(cone, width_samples, seed)
        width = (mean, se, width_samples)
    T_min, _ = theorem1_bound(J, g2, g2, g1, 1, delta)
    rep = ComplexityReport(
        scenario=scenario, n=n, J=J,
        gamma2_frob_bound=g2, gamma2_spec_bound=g2, gamma1_spec_bound=g1,
        delta=delta, T_min=T_min, beta=b, d=d if scenario == "subspace" else None,
        k=k if scenario == "sparse" else None, width_mc=width, J_exact=A_star is not None,
        gamma1_in_bound=scenario == "sparse",
    )
    rep.error_bounds = {int(T): rep.error_bound(T) for T in T_list}
    return rep
