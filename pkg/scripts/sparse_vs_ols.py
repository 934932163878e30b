#!/usr/bin/env python3
"""Paired comparison of the oracle-radius l1 estimator against OLS over a range of n.

For each n the sparsity is k = n and the horizon is T = ceil(c * n * ln n).
"""

import argparse
import math

import numpy as np

from lds_id.experiments import ExperimentPlan, run_plan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[10, 20, 30])
    ap.add_argument("--c", type=float, default=10.0, help="horizon multiplier")
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    print(f"{'n':>4} {'T':>6} {'median l1':>10} {'median OLS':>11} {'win rate':>9}")
    for n in args.n:
        T = math.ceil(args.c * n * math.log(n))
        plan = ExperimentPlan(scenario="sparse", n_grid=[n], T_grid=[T], dk_grid=[n],
                              trials=args.trials, base_seed=args.seed)
        recs = [r for r in run_plan(plan, workers=args.workers) if not r.failed]
        l1 = np.array([r.err_fro for r in recs])
        base = np.array([r.err_ols_fro for r in recs])
        print(f"{n:>4} {T:>6} {np.median(l1):10.4f} {np.median(base):11.4f} {np.mean(l1 < base):9.2f}")


if __name__ == "__main__":
    main()
