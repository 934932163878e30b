#!/usr/bin/env python3
"""Run an experiment plan and print per-point medians and fitted log-log slopes.

    python scripts/scaling_sweep.py plans/subspace_scaling.json --out results/scaling
"""

import argparse
import json
from pathlib import Path

from lds_id import _jsonio
from lds_id.experiments import ExperimentPlan, run_plan, summarize, write_csv, write_jsonl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("plan", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="directory for records.csv / summary.json")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    plan = ExperimentPlan.from_dict(json.loads(args.plan.read_text()))
    records = run_plan(plan, workers=args.workers)
    summary = summarize(plan, records)

    print(f"{'n':>4} {'T':>6} {'d/k':>5} {'median err':>12} {'median OLS':>12} {'failed':>6}")
    for p in summary["points"]:
        med = p["median_err_fro"]
        print(f"{p['n']:>4} {p['T']:>6} {p['d_or_k']:>5} "
              f"{med if med is None else format(med, '12.5f')} {p['median_err_ols_fro']:12.5f} {p['failed']:>6}")
    for f in summary["fits"]:
        print(f"{f['y']} vs {f['x']} {f['group']}: slope {f['slope']:+.4f}  r^2 {f['r_squared']:.4f}")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_csv(records, args.out / "records.csv")
        write_jsonl(records, args.out / "records.jsonl")
        _jsonio.dump(summary, args.out / "summary.json")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
