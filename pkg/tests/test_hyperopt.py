import json
from collections import Counter

import numpy as np
import pytest

from hfreadmit.claims import build_labeled
from hfreadmit.hyperopt import (SCHEDULE_RHO, SPACES, Trial, best_so_far, rank_trials, run_search, sample_config,
                                search_space, trial_seed)
from hfreadmit.models import MODEL_NAMES, build_model, default_config
from hfreadmit.synthgen import CohortConfig, generate
from hfreadmit.trainer import TrainConfig


@pytest.fixture(scope="module")
def cohort():
    return build_labeled(generate(CohortConfig(n_patients=400, seed=2)))


def test_marginals_are_uniform():
    space = search_space("rnn-lasthf")
    rng = np.random.default_rng(0)
    draws = [sample_config("rnn-lasthf", space, rng, 24) for _ in range(10_000)]
    for key in ("cell_type", "hidden", "n_layers", "nonlinearity", "batch_size"):
        counts = Counter(getattr(c, key) for c in draws)
        assert len(counts) == len(space[key])
        assert all(abs(n / 10_000 - 1 / len(space[key])) < 0.02 for n in counts.values())


def test_singleton_space_always_returns_its_point():
    space = {k: (v[0],) for k, v in search_space("mlp").items()}
    rng = np.random.default_rng(1)
    first = sample_config("mlp", space, rng, 10)
    assert all(sample_config("mlp", space, rng, 10) == first for _ in range(20))


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_every_draw_builds(name):
    rng = np.random.default_rng(3)
    for scale in ("paper", "desk"):
        space = search_space(name, scale)
        for _ in range(5):
            cfg = sample_config(name, space, rng, 24)
            if hasattr(cfg, "validate"):
                cfg.validate()
            build_model(name, 24, t_max=6, config=cfg)


def test_symbolic_sizes_resolve():
    cfg = sample_config("rnn-lasthf", {**search_space("rnn-lasthf"), "input_embed_dim": ("d/3",),
                                       "hidden": (64,), "output_embed_dim": ("Dh/4",)},
                        np.random.default_rng(0), 30)
    assert cfg.input_embed_dim == 10 and cfg.output_embed_dim == 16
    cfg = sample_config("rnnss-lasthf", search_space("rnnss-lasthf"), np.random.default_rng(0), 30)
    assert cfg.ss_rho == SCHEDULE_RHO[cfg.ss_schedule]


def test_space_keys():
    assert "alpha" not in search_space("rnncrf-pairwise") and "alpha" in search_space("rnn-convex_hf_nonhf")
    assert search_space("cnn", "desk")["n_kernels"] != SPACES["cnn"]["n_kernels"]
    with pytest.raises(ValueError):
        search_space("mlp", "huge")
    with pytest.raises(KeyError):
        search_space("transformer")


def test_trial_seeds_are_distinct_and_stable():
    seeds = [trial_seed(0, i) for i in range(100)]
    assert len(set(seeds)) == 100 and seeds == [trial_seed(0, i) for i in range(100)]


def test_search_is_deterministic_and_logged(cohort, tmp_path):
    tcfg = TrainConfig(max_epochs=2, patience=1)
    a = run_search("mlp", cohort, n_trials=3, seed=4, tcfg=tcfg, log_path=tmp_path / "trials.jsonl")
    b = run_search("mlp", cohort, n_trials=3, seed=4, tcfg=tcfg)
    strip = lambda ts: [(t.index, t.seed, t.config, t.val_auc, t.epochs) for t in ts]
    assert strip(a) == strip(b)
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert [json.loads(s)["index"] for s in lines] == [0, 1, 2]


def test_parallel_search_matches_serial(cohort):
    tcfg = TrainConfig(max_epochs=2, patience=1)
    a = run_search("crf-unary", cohort, n_trials=3, seed=1, tcfg=tcfg, workers=1)
    b = run_search("crf-unary", cohort, n_trials=3, seed=1, tcfg=tcfg, workers=2)
    assert [(t.index, t.val_auc) for t in a] == [(t.index, t.val_auc) for t in b]


def test_extra_configs_join_the_search(cohort):
    tcfg = TrainConfig(max_epochs=2, patience=1)
    best = default_config("rnn-lasthf", 1)
    trials = run_search("rnn-lasthf", cohort, n_trials=1, seed=0, tcfg=tcfg, scale="desk",
                        extra_configs=[best])
    extra = [t for t in trials if t.index == 1][0]
    assert extra.val_auc is not None and np.isfinite(extra.val_auc)


def test_ranking_and_running_best():
    trials = [Trial(0, 0, {}, 0.6, 1, 0.0), Trial(1, 0, {}, None, 0, 0.0, "diverged"),
              Trial(2, 0, {}, 0.7, 1, 0.0), Trial(3, 0, {}, 0.65, 1, 0.0), Trial(4, 0, {}, 0.7, 1, 0.0)]
    assert [t.index for t in rank_trials(trials)] == [2, 4, 3, 0, 1]
    curve = best_so_far(trials)
    assert curve == [0.6, 0.6, 0.7, 0.7, 0.7]
    assert all(a <= b for a, b in zip(curve, curve[1:]))
    with pytest.raises(ValueError):
        run_search("mlp", [], n_trials=0)
