"""Helpers shared across the test modules."""

import itertools
import math

import numpy as np

from hfreadmit.claims import Claim, PatientTimeline, label_timeline
from hfreadmit.crf import CrfPotentials
from hfreadmit.data import EncodedTimeline, make_batch
from hfreadmit.models import build_model
from hfreadmit.numerics import grad_check

D, DH, T = 7, 5, 4


def random_items(rng, n=3, d=D, t_max=T, min_len=1, all_hf=False):
    """Random encoded timelines; the last event is always an index event."""
    items = []
    for i in range(n):
        L = int(rng.integers(min_len, t_max + 1))
        hf = np.ones(L, bool) if all_hf else rng.random(L) < 0.6
        hf[-1] = True
        y = rng.integers(0, 2, L)
        items.append(EncodedTimeline(f"p{i}", rng.normal(size=(L, d)), y, hf))
    # both classes on the last event keeps class weights and BN well defined
    items[0].y[-1], items[-1].y[-1] = 0, 1
    return items


# (model name, config overrides) covering every family and layer option at d=7, D_h=5.
GRAD_CASES = (
    [(f"rnn-{loss}", dict(cell_type=cell, hidden=DH, p_dropout=0.0))
     for cell in ("vanilla", "lstm", "gru")
     for loss in ("convex_hf_lasthf", "lasthf", "uniform_hf", "convex_hf_nonhf")]
    + [
        ("rnn-convex_hf_lasthf", dict(cell_type="lstm", hidden=DH, n_layers=2, input_embed_dim=3,
                                      output_embed_dim=2, p_dropout=0.35, nonlinearity="tanh")),
        ("rnnss-convex_hf_lasthf", dict(hidden=DH, input_embed_dim=3, output_embed_dim=2)),
        ("rnnss-lasthf", dict(cell_type="vanilla", hidden=DH, input_embed_dim=0, output_embed_dim=0,
                              nonlinearity="relu")),
        ("crf-pairwise", {}),
        ("crf-unary", {}),
        ("neuralcrf-pairwise", dict(input_embed_dim=3, output_embed_dim=2)),
        ("neuralcrf-unary", dict(input_embed_dim=3, output_embed_dim=2)),
        ("rnncrf-pairwise", dict(hidden=DH, input_embed_dim=3, output_embed_dim=2)),
        ("rnncrf-unary", dict(hidden=DH, input_embed_dim=3, output_embed_dim=2)),
        ("mlp", dict(divisor=2, p_dropout=0.15)),
        ("mlp", dict(divisor=2, batch_norm=False, nonlinearity="tanh")),
        ("cnn", dict(n_kernels=3, block_repeats=2, fc_divisor=2)),
        ("cnn", dict(n_kernels=2, kernel=5, batch_norm=False, pooling="avg", nonlinearity="tanh",
                     fc_batch_norm=False, conv_repeats=2, block_repeats=1)),
        ("cnn-wide", dict(n_kernels=3, widths=(2, 3))),
        ("cnn-wide", dict(n_kernels=2, widths=(2, 3), pad=False, pooling="avg", batch_norm=False,
                          fc_repeats=2, fc_dropout=0.35)),
        ("lr-l2", dict(lam=0.1)),
        ("lr-l1", {}),
    ]
)


def case_id(case):
    name, ov = case
    return name + "".join(f"-{k}={v}" for k, v in sorted(ov.items()) if k in ("cell_type", "pad", "batch_norm"))


def model_grad_error(name, overrides, seed, n=4):
    """Max relative finite-difference error of one model on a random batch."""
    rng = np.random.default_rng(seed)
    items = random_items(rng, n=n, min_len=2 if name.startswith("cnn") else 1)
    model = build_model(name, D, t_max=T, seed=seed, **overrides)
    if hasattr(model, "p_teacher"):
        model.p_teacher = 0.5
    if name.startswith("lr"):
        # the trained weights are zero at construction; move off the origin
        model.params["lr.W"] = rng.normal(size=D)
        model.params["lr.b"] = rng.normal(size=1)
    batch = make_batch(items, model.max_len)
    cw = np.array([0.7, 1.6])

    def loss():
        return model.loss_and_grads(batch, cw, rng=np.random.default_rng(seed + 99), train=True,
                                    update_state=False)[0]

    _, G = model.loss_and_grads(batch, cw, rng=np.random.default_rng(seed + 99), train=True,
                                update_state=False)
    return grad_check(loss, model.params, G, h=1e-5)


def make_claim(pid, admit, discharge, hf=True, **kw):
    kw.setdefault("age", 70.0)
    return Claim(patient_id=pid, admit_day=admit, discharge_day=discharge, primary_hf=hf,
                 los=discharge - admit, **kw)


def labeled(events, followup=None, pid="p"):
    return label_timeline(PatientTimeline(pid, events, followup_admit_day=followup))


# -- CRF enumeration oracle ------------------------------------------------------

def brute_force(start, unary=None, transition=None, pairwise=None):
    """Enumerate every labeling with plain Python loops (no shared code with the package)."""
    K = len(start)
    T = len(unary) if unary is not None else len(pairwise) + 1
    scores = {}
    for path in itertools.product(range(K), repeat=T):
        s = start[path[0]]
        if unary is not None:
            s += unary[0][path[0]]
        for t in range(1, T):
            if unary is not None:
                s += unary[t][path[t]] + transition[path[t - 1]][path[t]]
            else:
                s += pairwise[t - 1][path[t - 1]][path[t]]
        scores[path] = s
    m = max(scores.values())
    log_z = m + math.log(sum(math.exp(v - m) for v in scores.values()))
    node = np.zeros((T, K))
    edge = np.zeros((max(T - 1, 0), K, K))
    for path, s in scores.items():
        p = math.exp(s - log_z)
        for t in range(T):
            node[t, path[t]] += p
        for t in range(1, T):
            edge[t - 1, path[t - 1], path[t]] += p
    best = max(scores, key=lambda p: (scores[p], [-y for y in p]))
    return scores, log_z, node, edge, list(best)


def random_potentials(rng, T, K, kind):
    start = rng.normal(size=K)
    if kind == "unary":
        return CrfPotentials(start=start, unary=rng.normal(size=(T, K)), transition=rng.normal(size=(K, K)))
    return CrfPotentials(start=start, pairwise=rng.normal(size=(T - 1, K, K)))


def oracle_of(pot):
    if pot.pairwise is not None:
        return brute_force(pot.start, pairwise=pot.pairwise)
    return brute_force(pot.start, unary=pot.unary, transition=pot.transition)


# criterion number -> (title, passed, detail); filled by test_acceptance, printed by conftest
ACCEPTANCE = {}
