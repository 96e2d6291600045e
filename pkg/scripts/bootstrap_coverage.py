"""Coverage of bootstrap percentile intervals for linear varying coefficients.

For each dataset seed, fits an ensemble with a linear encoder and counts how
many true coefficient-matrix entries fall inside the 5th-95th percentile band.

    python3 scripts/bootstrap_coverage.py --seeds 5 --trajectories 20
"""

import argparse

import numpy as np

from ctxml.datagen import GeneratorSpec, gen_linear_vc
from ctxml.encoders import EncoderSpec
from ctxml.training import TrainConfig, bootstrap_fit


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--trajectories", type=int, default=20)
    ap.add_argument("--n", type=int, default=1000)
    args = ap.parse_args()
    covered = total = 0
    for seed in range(args.seeds):
        data, truth = gen_linear_vc(GeneratorSpec("linear_vc", n=args.n, m=2, p=2, noise=0.1, seed=seed))
        cfg = TrainConfig(max_epochs=2000, learning_rate=0.05, patience=50, n_bootstraps=args.trajectories)
        ens = bootstrap_fit(data, EncoderSpec("linear", 2, 3), config=cfg)
        betas = np.stack([m.params["enc.W0"][:, :2].T for m in ens.members])
        lo, hi = np.percentile(betas, [ens.lower_q, ens.upper_q], axis=0)
        inside = (lo <= truth.meta["beta"]) & (truth.meta["beta"] <= hi)
        covered += int(inside.sum())
        total += inside.size
        print(f"seed {seed}: {int(inside.sum())}/{inside.size} covered, mean width {np.mean(hi - lo):.4f}")
    print(f"pooled coverage {covered}/{total} = {covered / total:.2f}")


if __name__ == "__main__":
    main()
