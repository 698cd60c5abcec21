import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from hfreadmit.claims import build_labeled
from hfreadmit.data import encode_dataset, make_batch
from hfreadmit.featurizer import fit_spec
from hfreadmit.models import build_model
from hfreadmit.synthgen import CohortConfig, generate
from hfreadmit.trainer import (LENGTH_BUCKETS, EvalReport, TrainConfig, auc, auc_by_timeline_length, auc_ci,
                               class_weights, cross_validate, length_bucket, make_folds, predict, train_model)

from support import D, random_items


def pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def delong_oracle(scores, labels, level=0.95):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    psi = lambda p, n: 1.0 if p > n else 0.5 if p == n else 0.0
    v10 = [np.mean([psi(p, n) for n in neg]) for p in pos]
    v01 = [np.mean([psi(p, n) for p in pos]) for n in neg]
    a = float(np.mean(v10))
    var = (np.var(v10, ddof=1) / len(pos) if len(pos) > 1 else 0) + \
          (np.var(v01, ddof=1) / len(neg) if len(neg) > 1 else 0)
    h = norm.ppf(0.5 + level / 2) * math.sqrt(var)
    return max(0.0, a - h), min(1.0, a + h)


# -- folds -------------------------------------------------------------------------

def test_folds_with_exact_divisibility():
    labels = [1] * 20 + [0] * 80
    plan = make_folds(labels, 5, seed=0)
    assert [sum(labels[j] for j in f.test) for f in plan.folds] == [4] * 5
    assert make_folds(labels, 5, seed=0) == plan
    assert make_folds(labels, 5, seed=1) != plan


def test_fold_sizes_differ_by_at_most_one():
    labels = [1] * 23 + [0] * 78
    sizes = [len(f.test) for f in make_folds(labels, 5, seed=3).folds]
    assert sum(sizes) == 101 and max(sizes) - min(sizes) <= 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=30, max_size=300), st.integers(2, 10), st.integers(0, 99))
def test_fold_hygiene(labels, k, seed):
    labels = np.array(labels)
    if np.bincount(labels, minlength=2).min() < k:
        with pytest.raises(ValueError):
            make_folds(labels, k, seed)
        return
    plan = make_folds(labels, k, seed)
    n = len(labels)
    tests = [j for f in plan.folds for j in f.test]
    assert sorted(tests) == list(range(n))
    for f in plan.folds:
        tr, va, te = set(f.train), set(f.val), set(f.test)
        assert not (tr & te) and not (va & te) and not (tr & va)
        assert tr | va | te == set(range(n))
        share = labels.mean() * len(f.test)
        assert abs(labels[f.test].sum() - share) < 1 + 1e-9


def test_validation_split_is_stratified():
    labels = np.array([1] * 200 + [0] * 800)
    for f in make_folds(labels, 5, seed=2).folds:
        assert len(f.val) == 80 and labels[f.val].sum() == 16


def test_fold_plan_patient_ids():
    plan = make_folds([0, 1] * 10, 2, 0, patient_ids=[f"p{i}" for i in range(20)])
    assert not set(plan.test_ids(0)) & set(plan.train_ids(0))


# -- class weights -----------------------------------------------------------------

def test_class_weight_examples():
    w = class_weights([0] * 900 + [1] * 100)
    assert w[0] == pytest.approx(1000 / 1800) and w[1] == 5.0
    assert np.array_equal(class_weights([0, 1, 1, 0]), [1.0, 1.0])
    with pytest.raises(ValueError):
        class_weights([1, 1])


def test_class_weights_equal_duplicating_positives():
    rng = np.random.default_rng(0)
    items = random_items(rng, n=12)
    for i, it in enumerate(items):
        it.y[-1] = int(i < 3)
    model = build_model("lr-l1", D)
    model.params["lr.W"], model.params["lr.b"] = rng.normal(size=D), rng.normal(size=1)
    cw = class_weights([it.last_label for it in items])
    weighted, _ = model.loss_and_grads(make_batch(items), cw)
    dup = items[3:] + items[:3] * 3
    plain, _ = model.loss_and_grads(make_batch(dup), None)
    assert weighted == pytest.approx(plain, abs=1e-10)


# -- AUC -------------------------------------------------------------------------------

def test_auc_examples():
    s = [0.9, 0.8, 0.3, 0.1]
    assert auc(s, [1, 1, 0, 0]) == 1.0
    assert auc(s, [0, 0, 1, 1]) == 0.0
    assert auc(s, [0, 1, 0, 1]) == 0.25
    assert auc([0.4] * 4, [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 1)), min_size=2, max_size=200))
def test_auc_equals_pair_counting(pairs):
    s, y = [p[0] for p in pairs], [p[1] for p in pairs]
    if len(set(y)) < 2:
        return
    assert abs(auc(s, y) - pair_auc(s, y)) <= 1e-12


@given(st.lists(st.integers(-50, 50), min_size=4, max_size=60), st.integers(0, 1000))
def test_auc_invariant_to_monotone_transforms(s, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(s))
    y[0], y[1] = 0, 1
    s = np.array(s) / 10
    assert auc(s, y) == auc(np.exp(s) * 3 + 1, y)


def test_ci_single_pair_is_degenerate():
    assert auc_ci([0.9, 0.1], [1, 0]) == (1.0, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_ci_matches_delong_oracle(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 80)
    s = np.round(rng.normal(size=80) + y, 1)
    lo, hi = auc_ci(s, y)
    olo, ohi = delong_oracle(s, y)
    assert lo == pytest.approx(olo, abs=1e-12) and hi == pytest.approx(ohi, abs=1e-12)
    assert lo <= auc(s, y) <= hi


def test_ci_narrows_with_sample_size():
    widths = {400: [], 4000: []}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        for n in widths:
            y = rng.integers(0, 2, n)
            lo, hi = auc_ci(rng.normal(size=n) + 0.8 * y, y)
            widths[n].append(hi - lo)
    assert np.median(widths[4000]) < np.median(widths[400])


def test_auc_by_length():
    s, y = [0.2, 0.7, 0.4, 0.9], [0, 1, 0, 1]
    table = auc_by_timeline_length(s, y, [1, 1, 1, 1])
    assert table["1"] == auc(s, y) and table["2"] is None
    table = auc_by_timeline_length(s, y, [1, 2, 1, 2])
    assert table["2"] is None and table["1"] is None
    assert set(table) == set(LENGTH_BUCKETS)
    assert length_bucket(7) == ">=5"


# -- training ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_cohort():
    tls = build_labeled(generate(CohortConfig(n_patients=240, seed=3)))
    plan = make_folds([t.last_label for t in tls], 5, 0)
    f = plan.folds[0]
    spec = fit_spec([tls[j] for j in f.train + f.val])
    enc = lambda idx: encode_dataset(spec, [tls[j] for j in idx])
    return tls, spec, enc(f.train), enc(f.val), enc(f.test)


def test_patience_zero_trains_one_epoch(small_cohort):
    _, spec, tr, va, _ = small_cohort
    res = train_model(build_model("mlp", spec.d), tr, va, TrainConfig(max_epochs=20, patience=0))
    assert len(res.curve) == 1 and res.best_epoch == 1


def test_training_is_deterministic(small_cohort):
    _, spec, tr, va, _ = small_cohort
    runs = []
    for _ in range(2):
        m = build_model("rnn-lasthf", spec.d, seed=4, hidden=6)
        runs.append(train_model(m, tr, va, TrainConfig(max_epochs=3, patience=3), seed=9).model.params)
    assert all(runs[0][k].tobytes() == runs[1][k].tobytes() for k in runs[0])


def test_best_epoch_has_the_best_validation_auc(small_cohort):
    _, spec, tr, va, _ = small_cohort
    m = build_model("crf-pairwise", spec.d, seed=0)
    res = train_model(m, tr, va, TrainConfig(max_epochs=8, patience=8), seed=1)
    vals = [row[2] for row in res.curve]
    assert res.best_val == max(vals) and res.best_epoch == vals.index(max(vals)) + 1
    assert auc(predict(res.model, va), [it.last_label for it in va]) == pytest.approx(res.best_val, abs=1e-12)


def test_stop_at_ends_training_early(small_cohort):
    _, spec, tr, _, _ = small_cohort
    m = build_model("mlp", spec.d)
    res = train_model(m, tr, tr, TrainConfig(max_epochs=50, patience=50, stop_at=0.6), seed=0)
    assert res.curve[-1][2] >= 0.6 and len(res.curve) < 50


def test_training_without_validation_uses_training_loss(small_cohort):
    _, spec, tr, _, _ = small_cohort
    res = train_model(build_model("mlp", spec.d), tr, [], TrainConfig(max_epochs=3, patience=3))
    assert res.best_val == max(row[2] for row in res.curve) and res.best_val < 0


def test_logistic_tunes_lambda_on_validation(small_cohort):
    _, spec, tr, va, _ = small_cohort
    m = build_model("lr-l1", spec.d, lam_grid=(1e-3, 1e-2, 1e-1))
    res = train_model(m, tr, va)
    assert len(res.curve) == 3 and res.model.config.lam in (1e-3, 1e-2, 1e-1)
    assert res.best_val == max(row[2] for row in res.curve)


def test_cross_validation_reports_are_reproducible(small_cohort, tmp_path):
    tls = small_cohort[0]
    tcfg = TrainConfig(max_epochs=2, patience=2)
    a = cross_validate("crf-unary", tls, k=3, seed=5, tcfg=tcfg, checkpoint_dir=tmp_path / "ck")
    b = cross_validate("crf-unary", tls, k=3, seed=5, tcfg=tcfg)
    assert a.to_json() == b.to_json()
    assert sorted(a.patient_ids) == sorted(t.patient_id for t in tls)
    assert len(a.fold_aucs) == 3 and all(lo <= x <= hi for x, (lo, hi) in zip(a.fold_aucs, a.fold_cis))
    assert (tmp_path / "ck" / "fold2" / "model.json").exists()
    a.save(tmp_path / "rep")
    assert EvalReport.load(tmp_path / "rep" / "report.json").to_json() == a.to_json()
    assert json.loads(a.to_json())["pooled_auc"] == a.pooled_auc
    for stem in ("report_scores.csv", "report_folds.csv", "report_by_length.csv"):
        assert (tmp_path / "rep" / stem).exists()


def test_test_patients_never_train(small_cohort):
    tls = small_cohort[0]
    plan = make_folds([t.last_label for t in tls], 5, 1, [t.patient_id for t in tls])
    for i in range(5):
        assert not set(plan.test_ids(i)) & set(plan.train_ids(i))
