"""Command-line entry point: ``lds-id simulate | estimate | complexity | experiment``.

Exit codes: 0 success, 2 parameter/domain error, 3 schema/input error,
4 solver divergence, 5 every trial at some grid point failed.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
long option names with dashes replaced by underscores) and repeated
``--set key=value`` overrides.  Precedence is: explicit flags, then
``--set``, then the config file, then built-in defaults.  The resolved
configuration is written into every output file under ``"config"``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from lds_id import _jsonio
from lds_id.dynamics import NOISE_FAMILIES, LdsModel, NoiseSpec, random_stable_matrix, simulate, Trajectory
from lds_id.errors import (
    DimensionError,
    DivergenceError,
    InstabilityError,
    LdsIdError,
    ParameterError,
    SchemaError,
)
from lds_id.estimators import (
    L1Ball,
    SolverConfig,
    Subspace,
    Unconstrained,
    build_data_matrices,
    check_first_order_inequality,
    constrained_ls,
    ols,
)
from lds_id.experiments import (
    ExperimentPlan,
    all_failed_points,
    run_plan,
    summarize,
    write_csv,
    write_jsonl,
)
from lds_id.geometry import complexity_report

EXIT_OK, EXIT_PARAM, EXIT_SCHEMA, EXIT_DIVERGED, EXIT_ALL_FAILED = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


# option schema per command: name -> (type, default)
SCHEMAS = {
    "simulate": {
        "n": (int, None), "T": (int, None), "seed": (int, 0), "noise": (str, "gaussian"),
        "spec_norm": (float, 0.7), "sparsity": (int, None), "A_file": (str, None), "out": (str, "trajectory.json"),
    },
    "estimate": {
        "traj": (str, None), "constraint": (str, "ols"), "max_iters": (int, 50_000), "tol": (float, None),
        "step_rule": (str, "lipschitz"), "step": (float, None), "seed": (int, 0), "out": (str, "estimate.json"),
    },
    "complexity": {
        "scenario": (str, "subspace"), "n": (int, None), "d": (int, None), "k": (int, None),
        "delta": (float, 0.05), "T": (str, "1000"), "A_file": (str, None), "width_samples": (int, 0),
        "seed": (int, 0), "out": (str, "complexity.json"),
    },
    "experiment": {
        "plan": (str, None), "out": (str, "results"), "workers": (int, None), "seed": (int, None),
    },
}


def _coerce(cmd, key, value):
    schema = SCHEMAS[cmd]
    if key not in schema:
        raise CliError(EXIT_SCHEMA, f"unknown option {key!r} for {cmd}")
    typ = schema[key][0]
    if value is None:
        return None
    try:
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        if typ is str and isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return typ(value)
    except (TypeError, ValueError):
        raise CliError(EXIT_SCHEMA, f"option {key!r} expects {typ.__name__}, got {value!r}") from None


def resolve_config(cmd, args) -> dict:
    cfg = {k: default for k, (_, default) in SCHEMAS[cmd].items()}
    if getattr(args, "config", None):
        try:
            data = _jsonio.load(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_SCHEMA, f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise CliError(EXIT_SCHEMA, "config file must hold a JSON object")
        for k, v in data.items():
            cfg[k] = _coerce(cmd, k, v)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(EXIT_SCHEMA, f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        cfg[k] = _coerce(cmd, k, v.strip())
    for k in SCHEMAS[cmd]:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _coerce(cmd, k, v)
    return cfg


def _load_matrix(path, key="A"):
    try:
        data = _jsonio.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_SCHEMA, f"cannot read matrix file {path}: {exc}") from None
    if isinstance(data, dict):
        if key not in data:
            raise CliError(EXIT_SCHEMA, f"{path} has no {key!r} entry")
        data = data[key]
    try:
        A = np.asarray(data, dtype=float)
    except (TypeError, ValueError):
        raise CliError(EXIT_SCHEMA, f"{path}: matrix entries must be numbers") from None
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise CliError(EXIT_SCHEMA, f"{path}: expected a square row-major matrix, got shape {A.shape}")
    return A


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg) -> int:
    noise = cfg["noise"]
    if noise not in NOISE_FAMILIES:
        raise CliError(EXIT_PARAM, f"noise must be one of {NOISE_FAMILIES}")
    if cfg["T"] is None or cfg["T"] < 1:
        raise CliError(EXIT_PARAM, "T must be given and >= 1")
    if cfg["A_file"]:
        A = _load_matrix(cfg["A_file"])
        if cfg["n"] is not None and cfg["n"] != A.shape[0]:
            raise CliError(EXIT_PARAM, f"--n {cfg['n']} does not match A of size {A.shape[0]}")
    else:
        if cfg["n"] is None or cfg["n"] < 1:
            raise CliError(EXIT_PARAM, "n must be given when no A file is provided")
        try:
            A = random_stable_matrix(cfg["n"], cfg["spec_norm"], k=cfg["sparsity"], seed=cfg["seed"])
        except ParameterError as exc:
            raise CliError(EXIT_PARAM, str(exc)) from None
    model = LdsModel(A)
    rho = model.spectral_radius
    if rho >= 1.0:
        raise CliError(EXIT_PARAM, f"A* is not strictly stable: spectral radius rho(A*) = {rho:.6g} >= 1")
    traj = simulate(model, NoiseSpec(noise), cfg["T"], seed=cfg["seed"])
    doc = traj.to_dict()
    doc["config"] = cfg
    _jsonio.dump(doc, cfg["out"])
    print(f"n = {model.n}")
    print(f"T = {cfg['T']}")
    print(f"rho(A*) = {rho:.17g}")
    print(f"J(A*) = {model.J:.17g}")
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def _parse_constraint(spec: str, traj: Trajectory):
    if spec in ("ols", "unconstrained"):
        return spec, None
    kind, _, arg = spec.partition(":")
    if kind == "l1":
        if arg == "oracle":
            if traj.A_star is None:
                raise CliError(EXIT_SCHEMA, "l1:oracle needs A* in the trajectory file")
            radius = float(np.abs(traj.A_star).sum())
        else:
            try:
                radius = float(arg)
            except ValueError:
                raise CliError(EXIT_PARAM, f"bad l1 radius {arg!r}") from None
        try:
            return "l1", L1Ball(radius)
        except ParameterError as exc:
            raise CliError(EXIT_PARAM, str(exc)) from None
    if kind == "subspace":
        try:
            data = _jsonio.load(arg)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_SCHEMA, f"cannot read basis file {arg!r}: {exc}") from None
        if not isinstance(data, dict) or "basis" not in data:
            raise CliError(EXIT_SCHEMA, f"basis file {arg} must be an object with a 'basis' list")
        try:
            K = Subspace(data["basis"], data.get("offset"))
        except (LdsIdError, ValueError, TypeError) as exc:
            raise CliError(EXIT_SCHEMA, f"malformed basis file {arg}: {exc}") from None
        if K.n != traj.n:
            raise CliError(EXIT_SCHEMA, f"basis matrices are {K.n}x{K.n} but the state dimension is {traj.n}")
        return "subspace", K
    raise CliError(EXIT_PARAM, f"unknown constraint {spec!r}; use ols | subspace:<file> | l1:<radius|oracle>")


def cmd_estimate(cfg) -> int:
    if not cfg["traj"]:
        raise CliError(EXIT_SCHEMA, "--traj is required")
    try:
        traj = Trajectory.from_dict(_jsonio.load(cfg["traj"]))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_SCHEMA, f"cannot read trajectory {cfg['traj']}: {exc}") from None
    kind, K = _parse_constraint(cfg["constraint"], traj)
    try:
        data = build_data_matrices(traj)
    except DimensionError as exc:
        raise CliError(EXIT_SCHEMA, str(exc)) from None
    try:
        solver = SolverConfig(max_iters=cfg["max_iters"], grad_map_tol=cfg["tol"],
                              step_rule=cfg["step_rule"], step=cfg["step"])
    except ParameterError as exc:
        raise CliError(EXIT_PARAM, str(exc)) from None
    if kind == "ols":
        res = ols(data)
        K = Unconstrained()
    else:
        try:
            res = constrained_ls(data, K if K is not None else Unconstrained(), solver)
        except DivergenceError as exc:
            raise CliError(EXIT_DIVERGED, f"solver diverged: {exc}") from None
        K = K if K is not None else Unconstrained()
    doc = res.to_dict()
    doc["constraint"] = cfg["constraint"]
    print(f"converged = {res.converged} after {res.iterations} iterations")
    print(f"objective = {res.objective:.17g}")
    if traj.A_star is not None:
        err = float(np.linalg.norm(res.A_hat - traj.A_star))
        doc["err_fro"] = err
        print(f"||A_hat - A*||_F = {err:.17g}")
        B = traj.A_star if K.contains(traj.A_star) else K.project(traj.A_star)
        rep = check_first_order_inequality(res.A_hat, B, traj.A_star, data)
        doc["first_order_check"] = rep.to_dict()
        which = "A*" if B is traj.A_star else "P_K(A*)"
        print(f"first-order inequality (B = {which}): slack = {rep.slack:.17g}"
              f"{' VIOLATED' if rep.violated else ''}")
    doc["config"] = cfg
    _jsonio.dump(doc, cfg["out"])
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def cmd_complexity(cfg) -> int:
    delta = cfg["delta"]
    if not 0.0 < delta < 1.0:
        raise CliError(EXIT_PARAM, f"delta must lie in (0, 1), got {delta}")
    try:
        T_list = [int(t) for t in str(cfg["T"]).split(",") if t.strip()]
    except ValueError:
        raise CliError(EXIT_PARAM, f"bad T list {cfg['T']!r}") from None
    if not T_list or min(T_list) < 1:
        raise CliError(EXIT_PARAM, "T list must hold positive integers")
    A = _load_matrix(cfg["A_file"]) if cfg["A_file"] else None
    n = cfg["n"] if cfg["n"] is not None else (None if A is None else A.shape[0])
    if n is None:
        raise CliError(EXIT_PARAM, "n is required")
    try:
        rep = complexity_report(cfg["scenario"], n, delta, T_list, d=cfg["d"], k=cfg["k"], A_star=A,
                                width_samples=cfg["width_samples"], seed=cfg["seed"])
    except InstabilityError as exc:
        raise CliError(EXIT_PARAM, str(exc)) from None
    except ParameterError as exc:
        raise CliError(EXIT_PARAM, str(exc)) from None
    doc = rep.to_dict()
    doc["config"] = cfg
    _jsonio.dump(doc, cfg["out"])
    print(f"J = {rep.J:.6g}  T_min ~ {rep.T_min:.6g} (up to constants)")
    for T, v in sorted(rep.error_bounds.items()):
        print(f"T = {T:>8d}  error bound ~ {v:.6g}")
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def cmd_experiment(cfg) -> int:
    if not cfg["plan"]:
        raise CliError(EXIT_SCHEMA, "--plan is required")
    try:
        raw = _jsonio.load(cfg["plan"])
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_SCHEMA, f"cannot read plan {cfg['plan']}: {exc}") from None
    if not isinstance(raw, dict):
        raise CliError(EXIT_SCHEMA, "plan must be a JSON object")
    if cfg["seed"] is not None:
        raw["base_seed"] = cfg["seed"]
    try:
        plan = ExperimentPlan.from_dict(raw)
    except (LdsIdError, TypeError, ValueError, KeyError) as exc:
        raise CliError(EXIT_SCHEMA, f"invalid plan: {exc}") from None
    records = run_plan(plan, workers=cfg["workers"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(records, out / "records.csv")
    write_jsonl(records, out / "records.jsonl")
    summary = summarize(plan, records)
    summary["config"] = cfg
    _jsonio.dump(summary, out / "summary.json")
    print(f"{len(records)} records, {summary['failed']} failed; wrote {out}/records.csv, records.jsonl, summary.json")
    for f in summary["fits"]:
        print(f"slope of {f['y']} vs {f['x']} {f['group']}: {f['slope']:.4f} (r^2 = {f['r_squared']:.4f})")
    dead = all_failed_points(records)
    if dead:
        print(f"every trial failed at grid points {dead}", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "complexity": cmd_complexity,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lds-id", description="Identify stable linear systems from a single trajectory.",
                                epilog="exit codes: 0 ok, 2 parameter error, 3 schema error, 4 divergence, 5 all trials failed")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    s = sub.add_parser("simulate", help="simulate a trajectory")
    common(s)
    s.add_argument("--n", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--noise", choices=NOISE_FAMILIES)
    s.add_argument("--spec-norm", dest="spec_norm", type=float)
    s.add_argument("--sparsity", type=int, help="number of nonzeros in the random A*")
    s.add_argument("--A-file", dest="A_file", help="JSON matrix (or object with key 'A')")

    e = sub.add_parser("estimate", help="estimate A* from a trajectory file")
    common(e)
    e.add_argument("--traj")
    e.add_argument("--constraint", help="ols | subspace:<basisfile> | l1:<radius|oracle>")
    e.add_argument("--max-iters", dest="max_iters", type=int)
    e.add_argument("--tol", type=float, help="gradient-mapping tolerance")
    e.add_argument("--step-rule", dest="step_rule", choices=("lipschitz", "fixed", "backtracking"))
    e.add_argument("--step", type=float)

    c = sub.add_parser("complexity", help="tabulate the error bound (up to constants)")
    common(c)
    c.add_argument("--scenario", choices=("subspace", "sparse"))
    c.add_argument("--n", type=int)
    c.add_argument("--d", type=int)
    c.add_argument("--k", type=int)
    c.add_argument("--delta", type=float)
    c.add_argument("--T", help="comma-separated horizons")
    c.add_argument("--A-file", dest="A_file")
    c.add_argument("--width-samples", dest="width_samples", type=int)

    x = sub.add_parser("experiment", help="run a Monte-Carlo sweep")
    common(x)
    x.add_argument("--plan", help="ExperimentPlan JSON file")
    x.add_argument("--workers", type=int, help="worker processes (default: $LDS_ID_THREADS or cores)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParameterError, InstabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
