"""Sparsity of the L1 logistic model on informative-plus-noise Gaussian data, across seeds and penalties.

Usage: python3 scripts/lasso_sparsity.py --lams 0.01 0.03 0.1 --seeds 10
"""

import argparse

import numpy as np

from hfreadmit.models import build_model

WEIGHTS = [2.0, -2.0, 1.5, -1.5, 1.0]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--noise", type=int, default=50)
    ap.add_argument("--lams", type=float, nargs="+", default=[0.01, 0.03, 0.1])
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    k, d = len(WEIGHTS), len(WEIGHTS) + args.noise
    for lam in args.lams:
        zeros, hits = [], []
        for seed in range(args.seeds):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(args.n, d))
            w = np.zeros(d)
            w[:k] = WEIGHTS
            y = (rng.random(args.n) < 1 / (1 + np.exp(-X @ w))).astype(float)
            model = build_model("lr-l1", d)
            model.fit(X, y, lam=lam)
            W = model.params["lr.W"]
            zeros.append(np.mean(W[k:] == 0))
            top = [j for j in np.argsort(-np.abs(W), kind="stable")[:8] if W[j] != 0]
            hits.append(sum(j < k for j in top))
        print(f"lambda={lam:g}  noise coefficients at zero: median {np.median(zeros):.0%}  "
              f"informative in top 8: median {np.median(hits):g}/{k}")
