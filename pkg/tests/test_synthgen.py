import numpy as np
import pytest
from scipy.stats import chi2_contingency

from hfreadmit.claims import build_labeled, build_timelines, write_claims_csv
from hfreadmit.synthgen import (PAPER_TABLE1, CohortConfig, ConfigError, generate, length_distribution,
                                summarize)

from support import make_claim


@pytest.fixture(scope="module")
def default_cohort():
    return generate(CohortConfig(n_patients=10_000, seed=7))


def test_default_cohort_matches_calibration_targets(default_cohort):
    s = summarize(default_cohort)
    assert abs(s.readmission_pct - 23.61) <= 2.0
    assert abs(s.timeline_len_mean - 1.88) <= 0.2
    assert abs(s.age_mean - 72.89) <= 0.5


def test_generated_claims_pass_inclusion_without_exclusions(default_cohort):
    excl = []
    tls = build_timelines(default_cohort, exclusions=excl)
    assert excl == [] and len(tls) == 10_000
    assert all(tl.events[-1].primary_hf for tl in tls)


def test_exclusion_injection():
    excl = []
    build_timelines(generate(CohortConfig(n_patients=400, seed=1, exclusion_rate=0.1)), exclusions=excl)
    assert 10 < len(excl) < 80 and {e.reason for e in excl} == {"under_18"}


def test_no_history_effect_means_labels_independent_of_length():
    pvals = []
    for seed in range(10):
        tls = build_labeled(generate(CohortConfig(n_patients=2000, seed=seed, history_effect=0.0)))
        lens = np.minimum([tl.T for tl in tls], 3)
        ys = np.array([tl.last_label for tl in tls])
        table = np.array([[np.sum((lens == k) & (ys == y)) for y in (0, 1)] for k in (1, 2, 3)])
        pvals.append(chi2_contingency(table)[1])
    assert min(pvals) > 0.01


def test_history_effect_ties_labels_to_length():
    tls = build_labeled(generate(CohortConfig(n_patients=3000, seed=0, history_effect=1.0)))
    lens = np.array([tl.T for tl in tls])
    ys = np.array([tl.last_label for tl in tls])
    assert ys[lens >= 3].mean() > ys[lens == 1].mean() + 0.1


def test_same_seed_gives_identical_csv(tmp_path):
    cfg = CohortConfig(n_patients=200, seed=11)
    write_claims_csv(tmp_path / "a.csv", generate(cfg))
    write_claims_csv(tmp_path / "b.csv", generate(cfg))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_worker_count_does_not_change_output():
    cfg = CohortConfig(n_patients=300, seed=4)
    assert generate(cfg, workers=1) == generate(cfg, workers=2)


def test_different_seeds_differ():
    assert generate(CohortConfig(n_patients=50, seed=1)) != generate(CohortConfig(n_patients=50, seed=2))


@pytest.mark.parametrize("kw", [dict(target_readmit_rate=0.0), dict(target_readmit_rate=1.5),
                                dict(n_patients=0), dict(n_mdc=1), dict(history_effect=-1.0),
                                dict(history_weights=(1.0, 2.0))])
def test_infeasible_configs(kw):
    with pytest.raises(ConfigError):
        generate(CohortConfig(**kw))


def test_length_distribution_hits_mean():
    p = length_distribution(1.88, 12)
    assert np.isclose(p.sum(), 1.0) and abs(np.arange(1, 13) @ p - 1.88) < 1e-6


def test_summary_of_single_claim():
    s = summarize([make_claim("p", 0, 3, age=80.0)])
    assert s.age_mean == 80.0 and s.age_sd == 0.0 and s.n_patients == 1


def test_summary_reports_reference_values():
    s = summarize([make_claim("p", 0, 3)])
    assert PAPER_TABLE1["n_patients"] == 272_778
    assert PAPER_TABLE1["hf_event_pct"] == 66.94 and PAPER_TABLE1["readmission_pct"] == 23.61
    text = s.table()
    assert "272778" in text and "66.94" in text and "23.61" in text
    assert '"reference"' in s.to_json()


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])
