"""Acceptance checks, one test per criterion; a PASS/FAIL line for each is printed at the end of the run."""

import dataclasses
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfreadmit.claims import build_labeled, index_mask
from hfreadmit.crf import forward_backward
from hfreadmit.data import EncodedTimeline, make_batch
from hfreadmit.experiments import holdout_aucs, overfit, separable_cohort
from hfreadmit.importance import jaccard, metric_from_effects, perturbation_effects
from hfreadmit.models import MODEL_NAMES, augment_previous_labels, build_model
from hfreadmit.synthgen import CohortConfig, generate, summarize
from hfreadmit.trainer import TrainConfig, auc, cross_validate, make_folds

from support import ACCEPTANCE, D, DH, GRAD_CASES, make_claim, labeled, model_grad_error, oracle_of, \
    random_items, random_potentials


def record(n, title, ok, detail):
    ACCEPTANCE[n] = (title, bool(ok), detail)
    assert ok, f"criterion {n} ({title}) failed: {detail}"


def pair_auc(s, y):
    pos = [a for a, b in zip(s, y) if b == 1]
    neg = [a for a, b in zip(s, y) if b == 0]
    return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))


# 1 ---------------------------------------------------------------------------------

def test_crf_oracle_equivalence():
    t0 = time.perf_counter()
    worst, paths_ok = 0.0, True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        pot = random_potentials(rng, int(rng.integers(1, 5)), int(rng.integers(2, 4)),
                                "unary" if seed % 2 else "pairwise")
        scores, log_z, node, edge, best = oracle_of(pot)
        res = forward_backward(pot)
        path_p = max(abs(math.exp(s - res.log_Z) - math.exp(s - log_z)) for s in scores.values())
        worst = max(worst, abs(res.log_Z - log_z), np.abs(res.node_marginals - node).max(),
                    np.abs(res.edge_marginals - edge).max() if edge.size else 0.0, path_p)
        paths_ok &= res.viterbi_path == best
    secs = time.perf_counter() - t0
    record(1, "CRF oracle equivalence", worst < 1e-8 and paths_ok and secs < 5,
           f"max abs err {worst:.1e}, viterbi exact {paths_ok}, {secs:.2f}s for 100 sets")


# 2 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_gradient_suite():
    worst, where = 0.0, None
    for name, overrides in GRAD_CASES:
        for seed in range(20):
            err = model_grad_error(name, overrides, seed)
            if err > worst:
                worst, where = err, (name, seed)
    record(2, "gradient suite", worst < 1e-4,
           f"max rel err {worst:.2e} over {len(GRAD_CASES)} cases x 20 seeds (worst {where[0]} seed {where[1]})")


# 3 ---------------------------------------------------------------------------------

def test_auc_correctness():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 15, n) / 7.0          # coarse grid forces ties
        worst = max(worst, abs(auc(s, y) - pair_auc(s, y)))
    s = [0.9, 0.8, 0.3, 0.1]
    exact = (auc(s, [1, 1, 0, 0]), auc(s, [0, 0, 1, 1]), auc([0.5] * 4, [1, 0, 1, 0]))
    record(3, "AUC correctness", worst <= 1e-12 and exact == (1.0, 0.0, 0.5),
           f"max |rank - pairs| {worst:.1e} on 200 instances; perfect/reversed/constant {exact}")


# 4 ---------------------------------------------------------------------------------

@st.composite
def timelines(draw):
    n = draw(st.integers(1, 8))
    hf = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    hf[-1] = True
    los = draw(st.lists(st.integers(0, 10), min_size=n, max_size=n))
    gaps = draw(st.lists(st.sampled_from([0, 1, 29, 30, 31, 45]) | st.integers(0, 90), min_size=n, max_size=n))
    events, day = [], 0
    for h, l, g in zip(hf, los, gaps):
        events.append(make_claim("p", day, day + l, hf=h))
        day += l + g
    return events, (day if draw(st.booleans()) else None), gaps


_label_cases = []


@settings(max_examples=300, deadline=None)
@given(timelines())
def _label_property(case):
    events, follow, gaps = case
    tl = labeled(events, follow)
    for t, (y, idx) in enumerate(zip(tl.labels, index_mask(tl))):
        has_next = t + 1 < len(events) or follow is not None
        assert y == int(has_next and gaps[t] <= 30)
        assert bool(y and idx) == bool(idx and has_next and gaps[t] <= 30)
    _label_cases.append(len(events))


def test_labeling_rule():
    ok, detail = True, ""
    try:
        _label_property()
        boundary = (labeled([make_claim("p", 0, 10), make_claim("p", 40, 41)]).labels[0],
                    labeled([make_claim("p", 0, 10), make_claim("p", 41, 42)]).labels[0],
                    labeled([make_claim("p", 0, 10)], followup=40).labels[0])
        ok = boundary == (1, 0, 1)
        detail = f"{len(_label_cases)} random timelines; gap 30 -> 1, gap 31 -> 0, look-ahead 30 -> 1: {boundary}"
    except AssertionError as exc:
        ok, detail = False, f"property violated: {exc}"
    record(4, "labeling rule", ok, detail)


# 5 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_overfit_capability():
    spec, items = separable_cohort(200, seed=0, effect=8.0)
    bad, slowest, lowest = [], 0.0, 1.0
    for name in MODEL_NAMES:
        score, epochs, secs = overfit(name, spec, items, max_epochs=200, target=0.95)
        slowest, lowest = max(slowest, secs), min(lowest, score)
        if score < 0.95 or epochs > 200 or secs >= 120:
            bad.append(f"{name} ({score:.3f}, {epochs} ep, {secs:.0f}s)")
    record(5, "overfit capability", not bad,
           f"{len(MODEL_NAMES)} models, min train AUC {lowest:.4f}, slowest {slowest:.1f}s"
           + (f"; failing: {', '.join(bad)}" if bad else ""))


# 6 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_timeline_signal_replication():
    gaps = {}
    for h in (1.0, 0.0):
        gaps[h] = []
        for seed in range(5):
            r = holdout_aucs(CohortConfig(n_patients=10_000, seed=seed, history_effect=h))
            gaps[h].append(r.test_auc["rnncrf-pairwise"] - r.test_auc["mlp"])
    med1, med0 = float(np.median(gaps[1.0])), float(np.median(gaps[0.0]))
    fmt = lambda v: " ".join(f"{g:+.4f}" for g in v)
    record(6, "timeline-signal replication", med1 >= 0.03 and abs(med0) <= 0.01,
           f"RNNCRF-pairwise minus MLP median gap {med1:+.4f} with history [{fmt(gaps[1.0])}], "
           f"{med0:+.4f} without [{fmt(gaps[0.0])}]")


# 7 ---------------------------------------------------------------------------------

def test_lasso_sparsity():
    zero_frac, hits = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(2000, 55))
        w = np.zeros(55)
        w[:5] = [2.0, -2.0, 1.5, -1.5, 1.0]
        y = (rng.random(2000) < 1 / (1 + np.exp(-X @ w))).astype(float)
        model = build_model("lr-l1", 55)
        model.fit(X, y, lam=0.1)
        W = model.params["lr.W"]
        zero_frac.append(float(np.mean(W[5:] == 0)))
        top = [j for j in np.argsort(-np.abs(W), kind="stable")[:8] if W[j] != 0]
        hits.append(sum(j < 5 for j in top))
    mz, mh = float(np.median(zero_frac)), float(np.median(hits))
    record(7, "LASSO sparsity", mz >= 0.8 and mh >= 4,
           f"median noise zeros {mz:.0%}, median informative in top 8 {mh:g}/5 over 10 seeds")


# 8 ---------------------------------------------------------------------------------

def test_synthetic_calibration():
    s = summarize(generate(CohortConfig(n_patients=10_000)))
    ok = abs(s.readmission_pct - 23.61) <= 2 and abs(s.timeline_len_mean - 1.88) <= 0.2 \
        and abs(s.age_mean - 72.89) <= 0.5
    record(8, "synthetic calibration", ok,
           f"readmission {s.readmission_pct:.2f}%, length {s.timeline_len_mean:.3f}, age {s.age_mean:.2f}")


# 9 ---------------------------------------------------------------------------------

def test_cv_hygiene(tmp_path):
    tls = build_labeled(generate(CohortConfig(n_patients=500, seed=4)))
    labels = np.array([t.last_label for t in tls])
    ids = [t.patient_id for t in tls]
    plan = make_folds(labels, 5, seed=0, patient_ids=ids)
    prevalence_ok = all(abs(labels[f.test].sum() - labels.mean() * len(f.test)) < 1 + 1e-9 for f in plan.folds)
    leak_free = all(not set(plan.test_ids(i)) & set(plan.train_ids(i)) for i in range(plan.k))
    tcfg = TrainConfig(max_epochs=3, patience=3)
    blobs = []
    for run in ("a", "b"):
        cross_validate("rnncrf-pairwise", tls, k=5, seed=3, tcfg=tcfg).save(tmp_path / run)
        blobs.append((tmp_path / run / "report.json").read_bytes())
    same = blobs[0] == blobs[1]
    record(9, "CV hygiene", prevalence_ok and leak_free and same,
           f"prevalence within one {prevalence_ok}, no train/test patient overlap {leak_free}, "
           f"byte-identical reports {same}")


# 10 --------------------------------------------------------------------------------

def test_importance_metrics():
    W, b = np.array([1.2, -0.7, 0.0]), 0.4
    predict = lambda items: np.array([1 / (1 + np.exp(-(W @ it.X[-1] + b))) for it in items])
    last = [[1, 1, 0], [1, 0, 1], [0, 1, 1], [0, 0, 0], [1, 1, 1]]
    items = [EncodedTimeline(str(i), np.array([[1.0, 1.0, 1.0], r], float), np.array([0, 0]),
                             np.array([True, True])) for i, r in enumerate(last)]
    diff, occ, pm = perturbation_effects(predict, items, np.zeros(3))
    sig = lambda z: 1 / (1 + math.exp(-z))
    worst = 0.0
    for j in range(3):
        rows = [r for r in last if r[j]]
        want = sum(sig(W @ r + b) - sig(W @ r + b - W[j]) for r in rows) / len(rows)
        worst = max(worst, abs(diff[j] - want))
    exact = np.array_equal(metric_from_effects("diff_prob_weighted", diff, occ, pm), diff * occ)
    jac = (jaccard({"a", "b"}, {"c", "d"}), jaccard({"a", "b"}, {"a", "b"}))
    record(10, "importance metrics", worst < 1e-10 and exact and jac == (0.0, 1.0),
           f"diff_prob max err {worst:.1e}, weighted exact {exact}, Jaccard disjoint/identical {jac}")


# 11 --------------------------------------------------------------------------------

def test_equivalence_bridges():
    crf_err = 0.0
    for seed in range(20):
        pot = random_potentials(np.random.default_rng(seed), 4, 3, "unary")
        a, c = forward_backward(pot), forward_backward(pot.as_pairwise())
        crf_err = max(crf_err, abs(a.log_Z - c.log_Z), np.abs(a.node_marginals - c.node_marginals).max(),
                      np.abs(a.edge_marginals - c.edge_marginals).max())
        crf_err = max(crf_err, 0.0 if a.viterbi_path == c.viterbi_path else np.inf)

    rng = np.random.default_rng(1)
    batch = make_batch(random_items(rng, n=6))
    cw = np.array([0.7, 1.5])
    kw = dict(hidden=DH, p_dropout=0.0)
    la, ga = build_model("rnn-convex_hf_lasthf", D, seed=3, alpha=1.0, **kw).loss_and_grads(batch, cw)
    lb, gb = build_model("rnn-lasthf", D, seed=3, **kw).loss_and_grads(batch, cw)
    alpha_err = max([abs(la - lb)] + [np.abs(ga[k] - gb[k]).max() for k in ga])

    kw = dict(cell_type="gru", hidden=DH, input_embed_dim=3, output_embed_dim=2, p_dropout=0.35,
              nonlinearity="tanh")
    ss = build_model("rnnss-lasthf", D, seed=5, **kw)
    ss.p_teacher = 1.0
    plain = build_model("rnn-lasthf", D + 2, seed=5, **kw)
    prev = np.full(batch.y.shape, -1)
    prev[:, 1:] = batch.y[:, :-1]
    aug = dataclasses.replace(batch, X=augment_previous_labels(batch.X, prev))
    l1, g1 = ss.loss_and_grads(batch, cw, rng=np.random.default_rng(11))
    l2, g2 = plain.loss_and_grads(aug, cw, rng=np.random.default_rng(np.random.default_rng(11).integers(2**63)))
    ss_err = max([abs(l1 - l2)] + [np.abs(g1[k] - g2[k]).max() for k in g1])
    record(11, "equivalence bridges", crf_err <= 1e-10 and alpha_err <= 1e-12 and ss_err <= 1e-12,
           f"unary-as-pairwise {crf_err:.1e}, alpha=1 vs LastHF {alpha_err:.1e}, "
           f"RNNSS p_teacher=1 vs RNN {ss_err:.1e}")
