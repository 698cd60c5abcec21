"""Timeline-aware vs event-view model on cohorts with and without history signal.

Usage: python3 scripts/timeline_signal.py --patients 10000 --seeds 0 1 2 3 4 --history 1.0 0.0
"""

import argparse
import time

import numpy as np

from hfreadmit.experiments import holdout_aucs
from hfreadmit.synthgen import CohortConfig

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--patients", type=int, default=10000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--history", type=float, nargs="+", default=[1.0, 0.0])
    ap.add_argument("--current", type=float, default=1.0, help="current-event effect size")
    ap.add_argument("--models", nargs="+", default=["rnncrf-pairwise", "mlp"])
    args = ap.parse_args()
    for h in args.history:
        gaps = []
        for s in args.seeds:
            t0 = time.time()
            cohort = CohortConfig(n_patients=args.patients, seed=s, history_effect=h, current_effect=args.current)
            r = holdout_aucs(cohort, args.models)
            gap = r.test_auc[args.models[0]] - r.test_auc[args.models[1]]
            gaps.append(gap)
            print(f"history={h} seed={s} " + " ".join(f"{k}={v:.4f}" for k, v in r.test_auc.items())
                  + f" chosen={r.chosen} gap={gap:+.4f} ({time.time() - t0:.0f}s)", flush=True)
        print(f"history={h} median gap {np.median(gaps):+.4f}", flush=True)
