"""Uniform random search over per-family configuration spaces."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .claims import PatientTimeline
from .data import encode_dataset
from .featurizer import fit_spec
from .models import build_model, default_config, family
from .numerics import NumericalError
from .trainer import TrainConfig, TrainingDiverged, make_folds, train_model

LAMBDAS = (1e-3, 1e-2, 1e-1)
BATCHES = (8, 16, 32, 64, 128)
DROPOUTS = (0.15, 0.35, 0.5)
NONLIN = ("tanh", "relu")

# Symbolic entries ("d/2", "Dh/3", ...) are resolved against the input or previous-layer size.
_RNN = {
    "input_embed_dim": (0, "d/2", "d/3", "d/4"),
    "cell_type": ("lstm", "gru", "vanilla"),
    "hidden": (8, 16, 32, 64, 128, 256),
    "n_layers": (1, 2, 3),
    "p_dropout": DROPOUTS,
    "output_embed_dim": (0, "Dh", "Dh/2", "Dh/3", "Dh/4"),
    "nonlinearity": NONLIN,
    "l2": LAMBDAS,
    "alpha": (0.65, 0.8, 0.95),
    "batch_size": BATCHES,
}

SPACES = {
    "rnn": _RNN,
    "rnnss": {**_RNN, "ss_schedule": ("linear", "exponential", "sigmoid")},
    "rnncrf": {k: v for k, v in _RNN.items() if k != "alpha"},
    "crf": {"l2": LAMBDAS, "batch_size": BATCHES},
    "neuralcrf": {
        "input_embed_dim": (0, "d/2", "d/3", "d/4"),
        "p_dropout": DROPOUTS,
        "output_embed_dim": (0, "Dl/2", "Dl/3", "Dl/4"),
        "nonlinearity": NONLIN,
        "l2": LAMBDAS,
        "batch_size": BATCHES,
    },
    "cnn": {
        "kernel": (3, 5),
        "batch_norm": (True, False),
        "nonlinearity": NONLIN,
        "conv_dropout": (0.0, 0.15),
        "n_kernels": (64, 128, 256),
        "conv_repeats": (1, 2, 3),
        "pooling": ("avg", "max"),
        "block_repeats": (7, 8),
        "fc_divisor": (3, 4, 5),
        "fc_batch_norm": (True, False),
        "fc_nonlinearity": NONLIN,
        "fc_dropout": (0.0, 0.15, 0.35, 0.5),
        "fc_repeats": (1, 2),
        "l2": LAMBDAS,
        "batch_size": (8, 16, 32),
    },
    "cnn-wide": {
        "n_widths": (2, 3),
        "widths": ((2, 3), (2, 5), (3, 5)),      # used when two kernel types are drawn
        "batch_norm": (True, False),
        "nonlinearity": NONLIN,
        "conv_dropout": (0.0, 0.15),
        "n_kernels": (16, 32, 64, 128),
        "pad": (True, False),
        "pooling": ("avg", "max"),
        "fc_divisor": (1, 2, 3, 4),
        "fc_batch_norm": (True, False),
        "fc_nonlinearity": NONLIN,
        "fc_dropout": (0.0, 0.15, 0.35, 0.5),
        "fc_repeats": (1, 2),
        "l2": LAMBDAS,
        "batch_size": (8, 16, 32),
    },
    "mlp": {
        "divisor": (2, 3, 4),
        "batch_norm": (True, False),
        "nonlinearity": NONLIN,
        "p_dropout": (0.0, 0.15, 0.35, 0.5),
        "n_blocks": (1, 2, 3, 4, 5),
        "l2": LAMBDAS,
        "batch_size": (32, 64, 128),
    },
    "lr-l1": {"lam": LAMBDAS},
    "lr-l2": {"lam": LAMBDAS + (1.0,)},
}

# Smaller convolution stacks for single-CPU runs; everything else is unchanged.
DESK_OVERRIDES = {
    "cnn": {"n_kernels": (4, 8, 16), "block_repeats": (2, 3)},
    "cnn-wide": {"n_kernels": (8, 16, 32)},
}

SCHEDULE_RHO = {"linear": 0.05, "exponential": 0.9, "sigmoid": 10.0}


def space_key(name: str) -> str:
    head = name.split("-")[0]
    if name in ("cnn", "cnn-wide", "mlp", "lr-l1", "lr-l2"):
        return name
    return head


def search_space(name: str, scale: str = "paper") -> dict:
    family(name)
    key = space_key(name)
    space = dict(SPACES[key])
    if scale == "desk":
        space.update(DESK_OVERRIDES.get(key, {}))
    elif scale != "paper":
        raise ValueError(f"unknown scale {scale!r}")
    return space


def _resolve(value, ref: int) -> int:
    if not isinstance(value, str):
        return value
    if "/" in value:
        return max(ref // int(value.split("/")[1]), 1)
    return ref


def sample_config(name: str, space: dict, rng: np.random.Generator, d: int):
    """Independent uniform draw per dimension; size-dependent entries resolved afterwards."""
    draw = {k: v[int(rng.integers(len(v)))] for k, v in space.items()}
    base = default_config(name, d)
    key = space_key(name)
    if key in ("rnn", "rnnss", "rnncrf"):
        draw["input_embed_dim"] = _resolve(draw["input_embed_dim"], d)
        draw["output_embed_dim"] = _resolve(draw["output_embed_dim"], draw["hidden"])
        if key == "rnnss":
            draw["ss_rho"] = SCHEDULE_RHO[draw["ss_schedule"]]
    elif key == "neuralcrf":
        draw["input_embed_dim"] = _resolve(draw["input_embed_dim"], d)
        d_l = draw["input_embed_dim"] or d
        draw["output_embed_dim"] = _resolve(draw["output_embed_dim"], d_l)
    elif key == "cnn-wide":
        n = draw.pop("n_widths")
        pair = draw.pop("widths")
        draw["widths"] = (2, 3, 5) if n == 3 else pair
    elif key.startswith("lr"):
        draw["lam_grid"] = (draw["lam"],)
    return replace(base, **draw)


@dataclass
class Trial:
    index: int
    seed: int
    config: dict
    val_auc: float | None
    epochs: int
    wall_time: float
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class _TrialJob:
    name: str
    index: int
    seed: int
    config: object
    train: list
    val: list
    d: int
    t_max: int | None
    tcfg: TrainConfig


def _run_trial(job: _TrialJob) -> Trial:
    t0 = time.perf_counter()
    cfg_dict = asdict(job.config)
    try:
        model = build_model(job.name, job.d, job.t_max, seed=job.seed, config=job.config)
        res = train_model(model, job.train, job.val, job.tcfg, seed=job.seed + 1)
        return Trial(job.index, job.seed, cfg_dict, float(res.best_val), len(res.curve),
                     time.perf_counter() - t0)
    except (TrainingDiverged, NumericalError, ValueError) as exc:
        return Trial(job.index, job.seed, cfg_dict, None, 0, time.perf_counter() - t0, repr(exc))


def trial_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def search_data(timelines: Sequence[PatientTimeline], seed: int = 0, subset_frac: float = 0.3,
                count_threshold: int = 5):
    """A ``subset_frac`` share of one fold's training data, split 90/10 into train/validation."""
    labels = [tl.last_label for tl in timelines]
    plan = make_folds(labels, 5, seed)
    rng = np.random.default_rng(seed)
    fold = plan.folds[int(rng.integers(plan.k))]
    pool = np.array(sorted(fold.train + fold.val))
    keep = rng.permutation(len(pool))[:max(int(round(subset_frac * len(pool))), 20)]
    sub = [timelines[j] for j in sorted(pool[keep])]
    inner = make_folds([tl.last_label for tl in sub], 10, seed + 1, val_frac=0.0)
    val_idx = set(inner.folds[0].test)
    train = [tl for i, tl in enumerate(sub) if i not in val_idx]
    val = [tl for i, tl in enumerate(sub) if i in val_idx]
    spec = fit_spec(train, count_threshold=count_threshold)
    return spec, encode_dataset(spec, train), encode_dataset(spec, val)


def run_search(name: str, timelines: Sequence[PatientTimeline], n_trials: int = 50, seed: int = 0,
               tcfg: TrainConfig | None = None, workers: int = 1, subset_frac: float = 0.3,
               count_threshold: int = 5, scale: str = "paper", log_path=None, extra_configs=()) -> list:
    """Run ``n_trials`` sampled configurations (plus any ``extra_configs``) and rank by validation AUC."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    spec, train, val = search_data(timelines, seed, subset_frac, count_threshold)
    t_max = max(it.T for it in train + val) if family(name) in ("cnn", "cnn-wide") else None
    space = search_space(name, scale)
    tcfg = tcfg or TrainConfig(max_epochs=30, patience=5)
    jobs = []
    for i in range(n_trials):
        s = trial_seed(seed, i)
        cfg = sample_config(name, space, np.random.default_rng(s), spec.d)
        jobs.append(_TrialJob(name, i, s, cfg, train, val, spec.d, t_max, tcfg))
    for j, cfg in enumerate(extra_configs, n_trials):
        jobs.append(_TrialJob(name, j, trial_seed(seed, j), cfg, train, val, spec.d, t_max, tcfg))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            trials = list(ex.map(_run_trial, jobs))
    else:
        trials = [_run_trial(j) for j in jobs]
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for t in trials:
                fh.write(t.to_json() + "\n")
    return rank_trials(trials)


def rank_trials(trials: Sequence[Trial]) -> list:
    """Best validation AUC first; failed trials last; trial index breaks ties."""
    return sorted(trials, key=lambda t: (t.val_auc is None, -(t.val_auc or 0.0), t.index))


def best_so_far(trials: Sequence[Trial]) -> list:
    out, best = [], -np.inf
    for t in sorted(trials, key=lambda t: t.index):
        if t.val_auc is not None:
            best = max(best, t.val_auc)
        out.append(best)
    return out
