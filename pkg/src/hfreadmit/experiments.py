"""Small held-out experiments shared by the scripts and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .claims import build_labeled
from .data import encode_dataset
from .featurizer import fit_spec
from .models import build_model
from .synthgen import CohortConfig, generate
from .trainer import TrainConfig, auc, make_folds, predict, train_model

# Candidate overrides per model, picked by validation AUC (a miniature search).
SIGNAL_CANDIDATES = {
    "rnncrf-pairwise": ({},),
    "mlp": ({}, {"batch_norm": False}, {"p_dropout": 0.35}),
}


@dataclass
class HoldoutResult:
    test_auc: dict = field(default_factory=dict)
    val_auc: dict = field(default_factory=dict)
    chosen: dict = field(default_factory=dict)


def holdout_split(cohort: CohortConfig, count_threshold: int = 5):
    """Encoded train/val/test from fold 0 of a stratified 5-fold plan (80/20 with 10% of train held for val)."""
    tls = build_labeled(generate(cohort))
    f = make_folds([t.last_label for t in tls], 5, cohort.seed).folds[0]
    tr, va, te = ([tls[j] for j in idx] for idx in (f.train, f.val, f.test))
    spec = fit_spec(tr + va, count_threshold=count_threshold)
    return spec, *(encode_dataset(spec, s) for s in (tr, va, te))


def holdout_aucs(cohort: CohortConfig, models=("rnncrf-pairwise", "mlp"), candidates=None,
                 tcfg: TrainConfig | None = None) -> HoldoutResult:
    """Test AUC per model after choosing among candidate overrides on the validation split."""
    spec, tr, va, te = holdout_split(cohort)
    y = np.array([it.last_label for it in te])
    tcfg = tcfg or TrainConfig(max_epochs=40, patience=5)
    candidates = SIGNAL_CANDIDATES if candidates is None else candidates
    out = HoldoutResult()
    for name in models:
        best = None
        for ov in candidates.get(name, ({},)):
            model = build_model(name, spec.d, seed=cohort.seed, **ov)
            res = train_model(model, tr, va, tcfg, seed=cohort.seed + 1)
            if best is None or res.best_val > best[0]:
                best = (res.best_val, ov, res.model)
        out.val_auc[name], out.chosen[name] = float(best[0]), best[1]
        out.test_auc[name] = auc(predict(best[2], te), y)
    return out


def separable_cohort(n_patients: int = 200, seed: int = 0, effect: float = 8.0):
    """A small cohort whose labels are nearly determined by current-event features; encoded on itself."""
    tls = build_labeled(generate(CohortConfig(n_patients=n_patients, seed=seed, current_effect=effect)))
    spec = fit_spec(tls)
    return spec, encode_dataset(spec, tls)


def overfit(name: str, spec, items, max_epochs: int = 200, target: float = 0.95, seed: int = 0):
    """Train on ``items`` and validate on the same set until the AUC reaches ``target``.

    Returns ``(training AUC, epochs run, seconds)``.
    """
    t0 = time.perf_counter()
    model = build_model(name, spec.d, t_max=max(it.T for it in items), seed=seed)
    tcfg = TrainConfig(max_epochs=max_epochs, patience=max_epochs, stop_at=target)
    res = train_model(model, items, items, tcfg, seed=seed + 1)
    score = auc(predict(res.model, items), [it.last_label for it in items])
    return score, len(res.curve), time.perf_counter() - t0
