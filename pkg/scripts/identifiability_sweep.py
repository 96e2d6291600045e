"""Heuristic threshold vs. empirical rank of the varying-coefficient design.

For each (m, p) the script grows n and reports the first n at which the
heuristic and the rank check each declare the design identifiable.

    python3 scripts/identifiability_sweep.py --max-dim 4
"""

import argparse

import numpy as np

from ctxml.identifiability import heuristic_check, rank_check


def first_identifiable(check, limit):
    return next((n for n in range(1, limit + 1) if check(n)), None)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--max-dim", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(" m  p  heuristic_n  rank_n  m*p")
    for m in range(1, args.max_dim + 1):
        for p in range(1, args.max_dim + 1):
            limit = 2 * m * p + 2
            C, X = rng.standard_normal((limit, m)), rng.standard_normal((limit, p))
            h = first_identifiable(lambda n: heuristic_check(n, m, p, "linear_vc").heuristic_identifiable, limit)
            r = first_identifiable(lambda n: rank_check(C[:n], X[:n])[1], limit)
            print(f"{m:2d} {p:2d}  {h:11d}  {r:6d}  {m * p:3d}")


if __name__ == "__main__":
    main()
