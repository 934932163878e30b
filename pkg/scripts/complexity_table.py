#!/usr/bin/env python3
"""Tabulate the closed-form complexity bounds next to Monte-Carlo widths and entropy integrals."""

import argparse
import math

import numpy as np

from lds_id.geometry import (
    L1DescentCone,
    SubspaceCone,
    beta,
    dudley_gamma_bound,
    gamma1_bound_l1,
    gaussian_width_mc,
    sparse_log_covering,
    subspace_log_covering,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("subspace cones")
    print(f"{'d':>5} {'sqrt d':>8} {'MC width':>9} {'Dudley a=2':>11} {'Dudley a=1':>11}")
    for d in (4, 16, 64, 256):
        w, _ = gaussian_width_mc(SubspaceCone(d), args.samples, seed=args.seed)
        fn = subspace_log_covering(d)
        print(f"{d:>5} {math.sqrt(d):8.3f} {w:9.3f} {dudley_gamma_bound(fn, 2.0, 2, [1.0]):11.3f} "
              f"{dudley_gamma_bound(fn, 2.0, 1, [1.0]):11.3f}")

    print("\nl1 descent cones, k = n")
    print(f"{'n':>5} {'beta':>8} {'MC width':>9} {'gamma1 bound':>13} {'Dudley a=1':>11} {'(n ln n)^1.5':>13}")
    for n in (5, 10, 20, 40):
        b = beta(n, n)
        cone = L1DescentCone(n=n, k=n, support=np.arange(n) * (n + 1), signs=np.ones(n))
        w, _ = gaussian_width_mc(cone, args.samples, seed=args.seed)
        dud = dudley_gamma_bound(sparse_log_covering(n, n), 2.0, 1, [b / n])
        print(f"{n:>5} {b:8.3f} {w:9.3f} {gamma1_bound_l1(n, n):13.2f} {dud:11.2f} {(n * math.log(n)) ** 1.5:13.2f}")


if __name__ == "__main__":
    main()
