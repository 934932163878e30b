"""Monte-Carlo sweeps comparing constrained least squares against OLS."""

from __future__ import annotations

import csv
import itertools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from lds_id import _jsonio
from lds_id.dynamics import LdsModel, NoiseSpec, make_rng, random_stable_matrix, simulate, spectral_norm
from lds_id.errors import DivergenceError, InsufficientDataError, ParameterError
from lds_id.estimators import L1Ball, SolverConfig, Subspace, Unconstrained, build_data_matrices, constrained_ls, ols

log = logging.getLogger(__name__)

SCENARIOS = ("subspace", "sparse", "unconstrained")
CSV_HEADER = [
    "scenario", "n", "T", "d_or_k", "trial_seed", "err_fro", "err_spec", "err_ols_fro",
    "objective", "iterations", "wall_time_ms", "failed",
]


def _check_grid(name, grid):
    if isinstance(grid, (str, bytes)) or not hasattr(grid, "__iter__"):
        raise ParameterError(f"{name} must be a list of integers")
    grid = list(grid)
    if any(isinstance(v, bool) or not isinstance(v, (int, np.integer)) for v in grid):
        raise ParameterError(f"{name} must contain integers, got {grid}")
    grid = [int(v) for v in grid]
    if not grid:
        raise ParameterError(f"{name} must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ParameterError(f"{name} must be strictly increasing, got {grid}")
    if grid[0] < 1:
        raise ParameterError(f"{name} entries must be positive")
    return grid


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: str
    n_grid: Sequence[int]
    T_grid: Sequence[int]
    dk_grid: Sequence[int] = (1,)
    trials: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    target_spec_norm: float = 0.7
    base_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    record_wall_time: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        object.__setattr__(self, "n_grid", tuple(_check_grid("n_grid", self.n_grid)))
        object.__setattr__(self, "T_grid", tuple(_check_grid("T_grid", self.T_grid)))
        object.__setattr__(self, "dk_grid", tuple(_check_grid("d_grid/k_grid", self.dk_grid)))
        for name in ("trials", "base_seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ParameterError(f"{name} must be an integer, got {v!r}")
        if not isinstance(self.target_spec_norm, (int, float)) or isinstance(self.target_spec_norm, bool):
            raise ParameterError("target_spec_norm must be a number")
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if not 0.0 < self.target_spec_norm < 1.0:
            raise ParameterError("target_spec_norm must lie in (0, 1)")
        if self.scenario != "unconstrained":
            for n, dk in itertools.product(self.n_grid, self.dk_grid):
                if dk > n * n:
                    raise ParameterError(f"d/k = {dk} exceeds n^2 = {n * n}")

    def grid_points(self):
        """Canonical ``((i_n, i_T, i_dk), (n, T, dk))`` ordering of the sweep."""
        idx = itertools.product(range(len(self.n_grid)), range(len(self.T_grid)), range(len(self.dk_grid)))
        for i, j, l in idx:
            yield (i, j, l), (self.n_grid[i], self.T_grid[j], self.dk_grid[l])

    def to_dict(self) -> dict:
        key = "k_grid" if self.scenario == "sparse" else "d_grid"
        return {
            "scenario": self.scenario,
            "n_grid": list(self.n_grid),
            "T_grid": list(self.T_grid),
            key: list(self.dk_grid),
            "trials": self.trials,
            "noise": self.noise.family,
            "target_spec_norm": self.target_spec_norm,
            "base_seed": self.base_seed,
            "solver": self.solver.to_dict(),
            "record_wall_time": self.record_wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        """Build a plan from its JSON form; unknown keys are rejected."""
        d = dict(d)
        allowed = {"scenario", "n_grid", "T_grid", "d_grid", "k_grid", "trials", "noise",
                   "target_spec_norm", "base_seed", "solver", "record_wall_time"}
        unknown = set(d) - allowed
        if unknown:
            raise ParameterError(f"unknown plan keys: {sorted(unknown)}")
        if "d_grid" in d and "k_grid" in d:
            raise ParameterError("give only one of d_grid / k_grid")
        missing = {"scenario", "n_grid", "T_grid"} - set(d)
        if missing:
            raise ParameterError(f"missing plan keys: {sorted(missing)}")
        dk = d.pop("d_grid") if "d_grid" in d else d.pop("k_grid", [1])
        noise = d.pop("noise", "gaussian")
        solver = d.pop("solver", None) or {}
        if not isinstance(solver, dict):
            raise ParameterError("solver must be an object")
        return cls(
            dk_grid=dk,
            noise=NoiseSpec(noise if isinstance(noise, str) else noise["family"]),
            solver=SolverConfig.from_dict(solver),
            **d,
        )


@dataclass(frozen=True)
class ExperimentRecord:
    scenario: str
    n: int
    T: int
    d_or_k: int
    trial_seed: int
    err_fro: float
    err_spec: float
    err_ols_fro: float
    objective: float
    iterations: int
    wall_time_ms: float
    failed: bool = False
    converged: bool = True

    def csv_row(self):
        f = _jsonio.format_float
        nums = [self.err_fro, self.err_spec, self.err_ols_fro, self.objective]
        return [
            self.scenario, str(self.n), str(self.T), str(self.d_or_k), str(self.trial_seed),
            *[("nan" if not np.isfinite(v) else f(v)) for v in nums],
            str(self.iterations), f(self.wall_time_ms), "true" if self.failed else "false",
        ]


def _seed_for(base_seed: int, *key) -> int:
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def random_subspace(n: int, d: int, seed) -> Subspace:
    """``d`` Gaussian ``n x n`` matrices orthonormalized under the trace inner product."""
    rng = make_rng(seed)
    return Subspace(rng.standard_normal((d, n, n)))


def _draw_system(plan: ExperimentPlan, idx, n, dk, trial_seed):
    """Return ``(A_star, K)`` for one trial."""
    rng = make_rng(trial_seed)
    if plan.scenario == "subspace":
        K = random_subspace(n, dk, _seed_for(plan.base_seed, 1, idx[0], idx[2]))
        A = np.tensordot(rng.standard_normal(K.d), K.basis, axes=1)
        A *= plan.target_spec_norm / spectral_norm(A)
        return A, K
    if plan.scenario == "sparse":
        A = random_stable_matrix(n, plan.target_spec_norm, k=dk, seed=rng)
        return A, L1Ball(np.abs(A).sum())
    return random_stable_matrix(n, plan.target_spec_norm, seed=rng), Unconstrained()


def run_trial(plan: ExperimentPlan, idx, n, T, dk, trial) -> ExperimentRecord:
    trial_seed = _seed_for(plan.base_seed, 0, *idx, trial)
    t0 = time.perf_counter()
    A, K = _draw_system(plan, idx, n, dk, trial_seed)
    traj = simulate(LdsModel(A), plan.noise, T, seed=_seed_for(trial_seed, 2))
    data = build_data_matrices(traj)
    base = dict(scenario=plan.scenario, n=n, T=T, d_or_k=dk, trial_seed=trial_seed)
    A_ols = ols(data).A_hat
    try:
        res = constrained_ls(data, K, plan.solver)
    except DivergenceError as exc:
        log.warning("trial %s diverged: %s", base, exc)
        nan = float("nan")
        return ExperimentRecord(**base, err_fro=nan, err_spec=nan,
                                err_ols_fro=float(np.linalg.norm(A_ols - A)),
                                objective=nan, iterations=exc.iteration, wall_time_ms=0.0,
                                failed=True, converged=False)
    wall = (time.perf_counter() - t0) * 1e3 if plan.record_wall_time else 0.0
    D = res.A_hat - A
    return ExperimentRecord(
        **base,
        err_fro=float(np.linalg.norm(D)),
        err_spec=float(np.linalg.norm(D, 2)),
        err_ols_fro=float(np.linalg.norm(A_ols - A)),
        objective=res.objective,
        iterations=res.iterations,
        wall_time_ms=wall,
        converged=res.converged,
    )


def _run_task(args):
    plan, idx, n, T, dk, trial = args
    return run_trial(plan, idx, n, T, dk, trial)


def default_workers() -> int:
    env = os.environ.get("LDS_ID_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"LDS_ID_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def run_plan(plan: ExperimentPlan, workers: Optional[int] = None) -> list:
    """Run every (grid point, trial) of the plan; records come back in canonical order."""
    tasks = [
        (plan, idx, n, T, dk, trial)
        for idx, (n, T, dk) in plan.grid_points()
        for trial in range(plan.trials)
    ]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, which is the canonical order
        return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# ---------------------------------------------------------------------------
# scaling-law fits


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    x: tuple
    y_median: tuple


def fit_loglog_slope(records, x_field: str, y_field: str, group_by: Sequence[str] = ()) -> dict:
    """Least-squares line through ``(ln x, ln median y)`` for each group.

    Failed records are skipped.  Returns ``{group_key: SlopeFit}`` where the
    key is the tuple of ``group_by`` values.
    """
    groups = {}
    for r in records:
        if getattr(r, "failed", False):
            continue
        key = tuple(getattr(r, g) for g in group_by)
        groups.setdefault(key, {}).setdefault(getattr(r, x_field), []).append(getattr(r, y_field))
    if not groups:
        raise InsufficientDataError("no usable records")
    out = {}
    for key, by_x in groups.items():
        xs = sorted(by_x)
        if len(xs) < 2:
            raise InsufficientDataError(f"group {key} has fewer than 2 distinct {x_field} values")
        med = [float(np.median(by_x[x])) for x in xs]
        lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(med))
        fit = stats.linregress(lx, ly)
        r2 = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 1.0
        out[key] = SlopeFit(float(fit.slope), float(fit.intercept), r2, tuple(xs), tuple(med))
    return out


# ---------------------------------------------------------------------------
# output


def write_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)  # RFC-4180: CRLF line ends, minimal quoting
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def read_csv(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(ExperimentRecord(
                scenario=row["scenario"], n=int(row["n"]), T=int(row["T"]), d_or_k=int(row["d_or_k"]),
                trial_seed=int(row["trial_seed"]), err_fro=float(row["err_fro"]),
                err_spec=float(row["err_spec"]), err_ols_fro=float(row["err_ols_fro"]),
                objective=float(row["objective"]), iterations=int(row["iterations"]),
                wall_time_ms=float(row["wall_time_ms"]), failed=row["failed"] == "true",
            ))
    return out


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_jsonio.dumps(asdict(r)))
            fh.write("\n")


def summarize(plan: ExperimentPlan, records) -> dict:
    """Per-group medians, failure counts and fitted slopes."""
    points = []
    by_point = {}
    for r in records:
        by_point.setdefault((r.n, r.T, r.d_or_k), []).append(r)
    for (n, T, dk), rs in by_point.items():
        ok = [r for r in rs if not r.failed]
        points.append({
            "n": n, "T": T, "d_or_k": dk, "trials": len(rs), "failed": len(rs) - len(ok),
            "median_err_fro": float(np.median([r.err_fro for r in ok])) if ok else None,
            "median_err_spec": float(np.median([r.err_spec for r in ok])) if ok else None,
            "median_err_ols_fro": float(np.median([r.err_ols_fro for r in ok])) if ok else None,
        })
    fits = []
    for x_field, group_by in (("T", ("n", "d_or_k")), ("d_or_k", ("n", "T"))):
        for y_field in ("err_fro", "err_ols_fro"):
            try:
                res = fit_loglog_slope(records, x_field, y_field, group_by)
            except InsufficientDataError:
                continue
            for key, fit in res.items():
                fits.append({
                    "x": x_field, "y": y_field, "group": dict(zip(group_by, key)),
                    "slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
                })
    return {
        "plan": plan.to_dict(),
        "records": len(records),
        "failed": sum(r.failed for r in records),
        "points": points,
        "fits": fits,
    }


def all_failed_points(records) -> list:
    by_point = {}
    for r in records:
        by_point.setdefault((r.n, r.T, r.d_or_k), []).append(r.failed)
    return [k for k, v in by_point.items() if all(v)]
