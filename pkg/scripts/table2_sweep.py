"""Cross-validate a list of models on one synthetic cohort; print pooled AUCs and AUC by timeline length.

Usage: python3 scripts/table2_sweep.py --patients 3000 --models lr-l1 mlp rnncrf-pairwise --out runs/sweep
"""

import argparse
from pathlib import Path

from hfreadmit.claims import build_labeled
from hfreadmit.models import MODEL_NAMES
from hfreadmit.synthgen import CohortConfig, generate
from hfreadmit.trainer import LENGTH_BUCKETS, TrainConfig, cross_validate, write_by_length_csv

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--patients", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--history", type=float, default=1.0)
    ap.add_argument("--models", nargs="+", default=["lr-l1", "mlp", "crf-pairwise", "rnn-lasthf", "rnncrf-pairwise"])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--patience", type=int, default=5)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()
    bad = [m for m in args.models if m not in MODEL_NAMES]
    if bad:
        ap.error(f"unknown models {bad}")
    tls = build_labeled(generate(CohortConfig(n_patients=args.patients, seed=args.seed,
                                              history_effect=args.history)))
    tcfg = TrainConfig(max_epochs=args.epochs, patience=args.patience)
    out = Path(args.out)
    by_length = {}
    print(f"{'model':24s} pooled AUC (95% CI)        " + " ".join(f"{b:>6s}" for b in LENGTH_BUCKETS))
    for name in args.models:
        rep = cross_validate(name, tls, k=5, seed=args.seed, tcfg=tcfg)
        rep.save(out / name)
        by_length[name] = rep.by_length
        cells = " ".join("     -" if rep.by_length[b] is None else f"{rep.by_length[b]:6.3f}" for b in LENGTH_BUCKETS)
        print(f"{name:24s} {rep.pooled_auc:.4f} ({rep.pooled_ci[0]:.4f}-{rep.pooled_ci[1]:.4f})  {cells}", flush=True)
    write_by_length_csv(out / "auc_by_length.csv", by_length)
