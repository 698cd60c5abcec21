"""Train every catalog model to fit a small separable cohort; report training AUC, epochs and time.

Usage: python3 scripts/overfit.py [--models mlp lr-l1 ...] [--effect 8]
"""

import argparse

from hfreadmit.experiments import overfit, separable_cohort
from hfreadmit.models import MODEL_NAMES

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--models", nargs="+", default=list(MODEL_NAMES))
    ap.add_argument("--effect", type=float, default=8.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec, items = separable_cohort(seed=args.seed, effect=args.effect)
    print(f"d={spec.d} n={len(items)} positives={sum(it.last_label for it in items)}", flush=True)
    for name in args.models:
        score, epochs, secs = overfit(name, spec, items)
        print(f"{name:24s} train AUC {score:.4f} epochs {epochs:3d} {secs:6.1f}s", flush=True)
