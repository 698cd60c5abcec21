"""Feature importance: normalised LASSO coefficients and last-event perturbation metrics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import EncodedTimeline, make_batch
from .featurizer import FeatureSpec

METRICS = ("diff_prob", "diff_prob_weighted", "ratio_diff_prob_weighted")


@dataclass
class ImportanceRow:
    feature: str
    mean: float | None
    sd: float | None
    occurrence: float
    rank: int | None = None

    @property
    def direction(self) -> str | None:
        if self.mean is None or self.mean == 0:
            return None
        return "increase" if self.mean > 0 else "decrease"


@dataclass
class ImportanceTable:
    metric: str
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self._rank()

    def _rank(self):
        """Ranks by |mean| (name breaks ties); null entries come last without a rank."""
        known = sorted((r for r in self.rows if r.mean is not None), key=lambda r: (-abs(r.mean), r.feature))
        for i, r in enumerate(known, 1):
            r.rank = i
        null = sorted((r for r in self.rows if r.mean is None), key=lambda r: r.feature)
        for r in null:
            r.rank = None
        self.rows = known + null

    def get(self, feature) -> ImportanceRow:
        for r in self.rows:
            if r.feature == feature:
                return r
        raise KeyError(feature)

    def values(self) -> dict:
        return {r.feature: r.mean for r in self.rows}

    def top(self, k: int, direction: str | None = None) -> list:
        rows = [r for r in self.rows if r.mean is not None and r.mean != 0]
        if direction is not None:
            rows = [r for r in rows if r.direction == direction]
        if k > len(rows):
            warnings.warn(f"k={k} exceeds the {len(rows)} ranked features; using all of them")
        return [r.feature for r in rows[:k]]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", f"{self.metric}_mean", f"{self.metric}_sd", "occurrence", "direction", "rank"])
            for r in self.rows:
                w.writerow([r.feature, "" if r.mean is None else r.mean, "" if r.sd is None else r.sd,
                            r.occurrence, r.direction or "", "" if r.rank is None else r.rank])


def write_coefficients_csv(path, names: Sequence[str], weights):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "weight"])
        w.writerows(zip(names, (float(v) for v in weights)))


def read_coefficients_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [r["feature"] for r in rows], np.array([float(r["weight"]) for r in rows])


def _per_fold_names(feature_names, n_folds):
    if feature_names and isinstance(feature_names[0], str):
        return [list(feature_names)] * n_folds
    if len(feature_names) != n_folds:
        raise ValueError(f"{len(feature_names)} name lists for {n_folds} folds")
    return [list(n) for n in feature_names]


def align_folds(fold_names, fold_vectors, fill: float):
    """Map per-fold vectors onto the union vocabulary (first-seen order); missing entries get ``fill``."""
    union = list(dict.fromkeys(n for names in fold_names for n in names))
    pos = {n: j for j, n in enumerate(union)}
    out = np.full((len(fold_vectors), len(union)), fill, dtype=float)
    for i, (names, v) in enumerate(zip(fold_names, fold_vectors)):
        v = np.asarray(v, float)
        if len(v) != len(names):
            raise ValueError(f"fold {i}: {len(v)} values for {len(names)} names")
        out[i, [pos[n] for n in names]] = v
    return union, out


def lasso_importance(fold_weights: Sequence, feature_names: Sequence) -> ImportanceTable:
    """Per-fold max-abs normalised coefficients, averaged across folds.

    ``feature_names`` is one shared list or one list per fold; per-fold
    vocabularies are aligned by name with absent features counted as zero.
    Features that are zero in every fold are left out. All-zero folds are
    skipped; if every fold is all-zero the table is empty.
    """
    feature_names, aligned = align_folds(_per_fold_names(feature_names, len(fold_weights)), fold_weights, 0.0)
    normed = []
    for W in aligned:
        m = np.abs(W).max() if W.size else 0.0
        if m == 0:
            warnings.warn("all-zero coefficient vector skipped")
            continue
        normed.append(W / m)
    if not normed:
        warnings.warn("every model is all-zero; importance table is empty")
        return ImportanceTable("lasso_coef")
    A = np.stack(normed)
    mean, sd = A.mean(0), A.std(0)
    occ = (A != 0).mean(0)
    rows = [ImportanceRow(n, float(mean[j]), float(sd[j]), float(occ[j]))
            for j, n in enumerate(feature_names) if (A[:, j] != 0).any()]
    return ImportanceTable("lasso_coef", rows)


def absent_values(spec: FeatureSpec, absent: str = "mean") -> np.ndarray:
    """Encoded value meaning "feature absent" for each coordinate.

    Indicator and count coordinates use 0. Standardised continuous coordinates
    use 0 (the training mean) under ``"mean"`` or the encoding of a raw zero
    under ``"zero"``.
    """
    if absent not in ("mean", "zero"):
        raise ValueError(f"unknown absent convention {absent!r}")
    base = np.zeros(spec.d)
    if absent == "zero" and spec.scale_mean:
        for name, j in spec.continuous_index().items():
            base[j] = -spec.scale_mean[name] / spec.scale_sd[name]
    return base


def _with_last_event(items, j, value):
    out = []
    for it in items:
        X = it.X.copy()
        X[-1, j] = value
        out.append(EncodedTimeline(it.patient_id, X, it.y, it.hf))
    return out


def perturbation_effects(predict_fn, items: Sequence[EncodedTimeline], absent: np.ndarray):
    """Raw per-feature statistics on one set of timelines.

    Returns ``diff`` (mean of p(present) - p(absent) over timelines where the
    feature is present, NaN if never present), ``occurrence`` and the mean
    present value of each feature.
    """
    d = len(absent)
    last = np.stack([it.X[-1] for it in items])
    base = predict_fn(items)
    diff = np.full(d, np.nan)
    occ = np.zeros(d)
    present_mean = np.full(d, np.nan)
    for j in range(d):
        present = last[:, j] != absent[j]
        occ[j] = present.mean()
        if not present.any():
            continue
        sub = [items[i] for i in np.flatnonzero(present)]
        p_absent = predict_fn(_with_last_event(sub, j, absent[j]))
        diff[j] = float(np.mean(base[present] - p_absent))
        present_mean[j] = float(last[present, j].mean())
    return diff, occ, present_mean


def metric_from_effects(metric, diff, occ, present_mean):
    if metric == "diff_prob":
        return diff
    if metric == "diff_prob_weighted":
        return diff * occ
    if metric == "ratio_diff_prob_weighted":
        with np.errstate(divide="ignore", invalid="ignore"):
            return diff / present_mean * occ
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def model_predictor(model, batch_size: int = 1024):
    def fn(items):
        out = [model.predict_last(make_batch(items[s:s + batch_size], model.max_len))
               for s in range(0, len(items), batch_size)]
        return np.concatenate(out)
    return fn


def perturb_importance(predict_fns: Sequence, item_sets: Sequence[Sequence[EncodedTimeline]],
                       feature_names: Sequence, metric: str = "diff_prob",
                       absents: Sequence[np.ndarray] | None = None) -> ImportanceTable:
    """Perturbation importance on the last index event, aggregated over folds.

    One predictor and one set of test timelines per fold; ``feature_names``
    is one shared list or one list per fold (aligned by name). Folds in which
    a feature never occurs are ignored for that feature; a feature present in
    no fold gets a null entry.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    fold_names = _per_fold_names(feature_names, len(predict_fns))
    absents = absents or [np.zeros(len(n)) for n in fold_names]
    vals, occs = [], []
    for fn, items, ab in zip(predict_fns, item_sets, absents):
        diff, occ, pm = perturbation_effects(fn, items, ab)
        vals.append(metric_from_effects(metric, diff, occ, pm))
        occs.append(occ)
    feature_names, V = align_folds(fold_names, vals, np.nan)
    _, O = align_folds(fold_names, occs, 0.0)
    rows = []
    for j, name in enumerate(feature_names):
        v = V[:, j][~np.isnan(V[:, j])]
        if len(v) == 0:
            rows.append(ImportanceRow(name, None, None, float(O[:, j].mean())))
        else:
            rows.append(ImportanceRow(name, float(v.mean()), float(v.std()), float(O[:, j].mean())))
    return ImportanceTable(metric, rows)


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def topk_jaccard(table_a: ImportanceTable, table_b: ImportanceTable, k: int = 100) -> dict:
    """Jaccard overlap of the top-k feature sets, per direction."""
    return {d: jaccard(table_a.top(k, d), table_b.top(k, d)) for d in ("increase", "decrease")}
