"""Stratified cross-validation, class weighting, training with epoch selection, AUC and CIs."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .claims import PatientTimeline
from .data import EncodedTimeline, encode_dataset, make_batch
from .featurizer import fit_spec
from .models import Model, build_model, family
from .numerics import AdamState, NumericalError, adam_step, clip_global_norm

log = logging.getLogger(__name__)

LENGTH_BUCKETS = ("1", "2", "3", "4", ">=5")


class TrainingDiverged(RuntimeError):
    pass


# -- folds -------------------------------------------------------------------------

@dataclass
class Fold:
    train: list        # patient positions
    val: list
    test: list


@dataclass
class FoldPlan:
    k: int
    seed: int
    patient_ids: list
    folds: list

    def test_ids(self, i):
        return [self.patient_ids[j] for j in self.folds[i].test]

    def train_ids(self, i):
        f = self.folds[i]
        return [self.patient_ids[j] for j in f.train + f.val]


def _stratified_split(labels, k, rng):
    """Assign positions to ``k`` groups so every class is spread as evenly as possible.

    Shuffled members of each class are dealt round-robin, continuing the
    deal across classes so group sizes also differ by at most one.
    """
    labels = np.asarray(labels)
    groups = [[] for _ in range(k)]
    pos = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        for j in rng.permutation(members):
            groups[pos % k].append(int(j))
            pos += 1
    return [sorted(g) for g in groups]


def make_folds(labels: Sequence[int], k: int = 5, seed: int = 0, patient_ids=None,
               val_frac: float = 0.1) -> FoldPlan:
    """Stratified k-fold plan on last-index-event outcomes, with a stratified validation carve-out."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=2)
    if k < 2:
        raise ValueError("k must be >= 2")
    if counts.min() < k:
        raise ValueError(f"each class needs at least k={k} members, got counts {counts.tolist()}")
    rng = np.random.default_rng(seed)
    tests = _stratified_split(labels, k, rng)
    folds = []
    for i in range(k):
        test = set(tests[i])
        train = np.array([j for j in range(len(labels)) if j not in test])
        n_val = int(round(val_frac * len(train)))
        if n_val >= 2:
            sub = _stratified_split(labels[train], int(round(1 / val_frac)), rng)[0]
            val = sorted(int(train[j]) for j in sub)
        else:
            val = []
        vs = set(val)
        folds.append(Fold(train=[int(j) for j in train if j not in vs], val=val, test=sorted(test)))
    ids = list(patient_ids) if patient_ids is not None else list(range(len(labels)))
    return FoldPlan(k, seed, ids, folds)


def class_weights(labels) -> np.ndarray:
    """``w_c = N / (2 n_c)``."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=2).astype(float)
    if (counts == 0).any():
        raise ValueError("class weights need both classes present")
    return len(labels) / (2 * counts)


# -- AUC -----------------------------------------------------------------------------

def _split(scores, labels):
    scores, labels = np.asarray(scores, float), np.asarray(labels)
    n1 = int((labels == 1).sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC is undefined with a single class")
    return scores, labels, n1, n0


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from midranks; ties count one half."""
    scores, labels, n1, n0 = _split(scores, labels)
    r = rankdata(scores)
    return float((r[labels == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def auc_ci(scores, labels, level: float = 0.95):
    """DeLong structural-components interval, normal approximation, clipped to [0, 1]."""
    scores, labels, n1, n0 = _split(scores, labels)
    pos, neg = labels == 1, labels == 0
    r_all = rankdata(scores)
    a = float((r_all[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))
    v10 = (r_all[pos] - rankdata(scores[pos])) / n0        # per positive: share of negatives beaten
    v01 = 1.0 - (r_all[neg] - rankdata(scores[neg])) / n1   # per negative: share of positives above it
    var = (np.var(v10, ddof=1) / n1 if n1 > 1 else 0.0) + (np.var(v01, ddof=1) / n0 if n0 > 1 else 0.0)
    if var <= 0:
        return a, a
    half = norm.ppf(0.5 + level / 2) * math.sqrt(var)
    return max(0.0, a - half), min(1.0, a + half)


def auc_or_none(scores, labels):
    labels = np.asarray(labels)
    if len(labels) == 0 or labels.min() == labels.max():
        return None
    return auc(scores, labels)


def length_bucket(T: int) -> str:
    if T < 1:
        raise ValueError("timeline length must be >= 1")
    return str(T) if T < 5 else ">=5"


def auc_by_timeline_length(scores, labels, lengths) -> dict:
    """AUC per length bucket; buckets without both classes map to None."""
    scores, labels = np.asarray(scores, float), np.asarray(labels)
    b = np.array([length_bucket(int(t)) for t in lengths])
    return {k: auc_or_none(scores[b == k], labels[b == k]) for k in LENGTH_BUCKETS}


# -- training ------------------------------------------------------------------------

@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    lr: float | None = None          # None: use the model config's learning rate
    batch_size: int | None = None    # None: use the model config's batch size
    eval_batch: int = 1024
    stop_at: float | None = None     # stop as soon as the validation metric reaches this value


@dataclass
class TrainResult:
    model: Model
    curve: list                      # rows of (epoch, train_loss, val_metric)
    best_epoch: int
    best_val: float

    def curve_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_auc"])
            w.writerows(self.curve)


def predict(model: Model, items: Sequence[EncodedTimeline], batch_size: int = 1024) -> np.ndarray:
    out = []
    for s in range(0, len(items), batch_size):
        out.append(model.predict_last(make_batch(items[s:s + batch_size], model.max_len)))
    return np.concatenate(out) if out else np.zeros(0)


def _last_event_matrix(items):
    return np.stack([it.X[-1] for it in items]), np.array([it.last_label for it in items])


def _fit_logistic(model, train, val, tcfg):
    X, y = _last_event_matrix(train)
    w = class_weights(y)[y]
    grid = list(model.config.lam_grid) if val else [model.config.lam]
    curve, best = [], (-np.inf, None, None)
    for i, lam in enumerate(grid):
        model.fit(X, y, w, lam=lam)
        metric = np.nan
        if val:
            Xv, yv = _last_event_matrix(val)
            metric = auc_or_none(model.predict_events(Xv), yv)
            metric = np.nan if metric is None else metric
        curve.append((i, float(model.objective(make_batch(train), class_weights(y))), metric))
        key = -np.inf if np.isnan(metric) else metric
        if best[1] is None or key > best[0]:
            best = (key, lam, copy.deepcopy(model.params))
    model.params = best[2]
    model.config.lam = best[1]
    return TrainResult(model, curve, grid.index(best[1]), best[0])


def train_model(model: Model, train: Sequence[EncodedTimeline], val: Sequence[EncodedTimeline] | None = None,
                tcfg: TrainConfig | None = None, seed: int = 0) -> TrainResult:
    """Mini-batch Adam; keeps the epoch with the best validation AUC (earliest on ties).

    Without a usable validation set (missing, or one class only) epochs are
    ranked by negative validation loss, or by training loss when ``val`` is empty.
    """
    tcfg = tcfg or TrainConfig()
    if family(model.name) == "lr":
        return _fit_logistic(model, train, val, tcfg)
    rng = np.random.default_rng(seed)
    cfg = model.config
    bs = tcfg.batch_size or cfg.batch_size
    opt = AdamState(lr=tcfg.lr or cfg.lr)
    cw = class_weights([it.last_label for it in train])
    val_labels = np.array([it.last_label for it in val]) if val else None
    use_auc = val_labels is not None and val_labels.min() != val_labels.max()
    best = (-np.inf, 0, None, None)
    curve = []
    for epoch in range(1, tcfg.max_epochs + 1):
        if hasattr(model, "set_epoch"):
            model.set_epoch(epoch - 1)
        order = rng.permutation(len(train))
        total = 0.0
        for s in range(0, len(order), bs):
            batch = make_batch([train[j] for j in order[s:s + bs]], model.max_len)
            try:
                loss, G = model.loss_and_grads(batch, cw, rng=rng, train=True)
                if model.clip:
                    clip_global_norm(G, getattr(cfg, "clip_norm", 5.0))
                model.params = adam_step(opt, model.params, G)
            except NumericalError as exc:
                raise TrainingDiverged(f"{model.name}: {exc} at epoch {epoch}, batch starting {s}") from exc
            total += loss * batch.B
        train_loss = total / len(train)
        if use_auc:
            metric = auc(predict(model, val, tcfg.eval_batch), val_labels)
        elif val:
            metric = -_eval_loss(model, val, cw)
        else:
            metric = -train_loss
        curve.append((epoch, train_loss, metric))
        if metric > best[0]:
            best = (metric, epoch, copy.deepcopy(model.params), copy.deepcopy(model.state))
        if epoch - best[1] >= tcfg.patience:
            break
        if tcfg.stop_at is not None and metric >= tcfg.stop_at:
            break
    model.params, model.state = best[2], best[3]
    return TrainResult(model, curve, best[1], best[0])


def _eval_loss(model, items, cw):
    loss = 0.0
    for s in range(0, len(items), 1024):
        b = make_batch(items[s:s + 1024], model.max_len)
        loss += model.loss_and_grads(b, cw, train=False)[0] * b.B
    return loss / len(items)


# -- cross-validation ---------------------------------------------------------------

@dataclass
class EvalReport:
    model: str
    k: int
    seed: int
    fold_aucs: list
    fold_cis: list
    fold_counts: list                # (n_neg, n_pos) per test fold
    pooled_auc: float
    pooled_ci: list
    mean_fold_auc: float
    patient_ids: list
    folds: list                      # fold index of each score
    scores: list
    labels: list
    lengths: list
    by_length: dict
    best_epochs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    def save(self, directory, stem="report"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        with open(directory / f"{stem}_scores.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "fold", "score", "label", "length"])
            w.writerows(zip(self.patient_ids, self.folds, self.scores, self.labels, self.lengths))
        with open(directory / f"{stem}_folds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "auc", "ci_low", "ci_high", "n_neg", "n_pos"])
            for i, (a, ci, n) in enumerate(zip(self.fold_aucs, self.fold_cis, self.fold_counts)):
                w.writerow([i, a, ci[0], ci[1], n[0], n[1]])
            w.writerow(["pooled", self.pooled_auc, self.pooled_ci[0], self.pooled_ci[1],
                        self.labels.count(0), self.labels.count(1)])
        write_by_length_csv(directory / f"{stem}_by_length.csv", {self.model: self.by_length})

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def write_by_length_csv(path, tables: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", *LENGTH_BUCKETS])
        for name, t in tables.items():
            w.writerow([name, *("" if t[b] is None else t[b] for b in LENGTH_BUCKETS)])


@dataclass
class FoldJob:
    name: str
    fold: int
    train: list
    val: list
    test: list
    count_threshold: int
    config: object
    tcfg: TrainConfig
    seed: int
    checkpoint_dir: str | None = None


def run_fold(job: FoldJob):
    """Fit features on the training part, train, score the test part."""
    from .models import save_checkpoint
    spec = fit_spec(job.train + job.val, count_threshold=job.count_threshold)
    tr, va, te = (encode_dataset(spec, s) for s in (job.train, job.val, job.test))
    t_max = max(it.T for it in tr + va) if family(job.name) in ("cnn", "cnn-wide") else None
    model = build_model(job.name, spec.d, t_max=t_max, seed=job.seed, config=copy.deepcopy(job.config))
    res = train_model(model, tr, va, job.tcfg, seed=job.seed + 1)
    if job.checkpoint_dir:
        d = Path(job.checkpoint_dir) / f"fold{job.fold}"
        save_checkpoint(res.model, d)
        (d / "feature_spec.json").write_text(spec.to_json(), encoding="utf-8")
        res.curve_csv(d / "curve.csv")
        if job.name == "lr-l1":
            from .importance import write_coefficients_csv
            write_coefficients_csv(d / "coefficients.csv", spec.feature_names(), res.model.params["lr.W"])
    return predict(res.model, te), res.best_epoch


def cross_validate(name: str, timelines: Sequence[PatientTimeline], k: int = 5, seed: int = 0,
                   config=None, tcfg: TrainConfig | None = None, count_threshold: int = 5,
                   workers: int = 1, checkpoint_dir=None) -> EvalReport:
    """Stratified k-fold evaluation of one catalog model; folds run in parallel when ``workers > 1``."""
    family(name)
    labels = [tl.last_label for tl in timelines]
    plan = make_folds(labels, k, seed, [tl.patient_id for tl in timelines])
    jobs = []
    for i, f in enumerate(plan.folds):
        jobs.append(FoldJob(name, i, [timelines[j] for j in f.train], [timelines[j] for j in f.val],
                            [timelines[j] for j in f.test], count_threshold, config, tcfg or TrainConfig(),
                            int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
                            None if checkpoint_dir is None else str(checkpoint_dir)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outs = list(ex.map(run_fold, jobs))
    else:
        outs = [run_fold(j) for j in jobs]
    pids, fold_of, scores, labs, lens = [], [], [], [], []
    fold_aucs, fold_cis, counts, epochs = [], [], [], []
    for i, (f, (s, ep)) in enumerate(zip(plan.folds, outs)):
        y = np.array([labels[j] for j in f.test])
        fold_aucs.append(auc(s, y))
        fold_cis.append(list(auc_ci(s, y)))
        counts.append([int((y == 0).sum()), int((y == 1).sum())])
        epochs.append(int(ep))
        for j, sc in zip(f.test, s):
            pids.append(timelines[j].patient_id)
            fold_of.append(i)
            scores.append(float(sc))
            labs.append(int(labels[j]))
            lens.append(timelines[j].T)
    return EvalReport(model=name, k=k, seed=seed, fold_aucs=fold_aucs, fold_cis=fold_cis, fold_counts=counts,
                      pooled_auc=auc(scores, labs), pooled_ci=list(auc_ci(scores, labs)),
                      mean_fold_auc=float(np.mean(fold_aucs)), patient_ids=pids, folds=fold_of,
                      scores=scores, labels=labs, lengths=lens,
                      by_length=auc_by_timeline_length(scores, labs, lens), best_epochs=epochs)
