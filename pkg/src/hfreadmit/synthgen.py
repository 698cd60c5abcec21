"""Synthetic HF claims cohorts shaped like the NRD extract.

The generator only tries to hit a handful of first moments (timeline
length, readmission rate, age, sex, HF share, payer mix). Readmission
log-odds combine a few current-event covariates with a history term built
from earlier events, so timeline-aware models have something to find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from collections import Counter

import numpy as np
from scipy.optimize import brentq

from .claims import Claim, N_COMORBID, build_labeled, MIN_AGE, READMIT_WINDOW_DAYS, WINDOW_END_DAY
from .featurizer import COMORBIDITIES

CHF = "Congestive heart failure; non-hypertensive"
TOP_DIAGNOSES = (
    CHF,
    "Coronary atherosclerosis and other heart disease",
    "Residual codes",
    "Cardiac dysrhythmias",
    "Chronic kidney disease",
)
TOP_PROCEDURES = (
    "Diagnostic cardiac catheterization; coronary arteriography",
    "Respiratory intubation and mechanical ventilation",
    "Blood transfusion",
    "Diagnostic ultrasound of heart (echocardiogram)",
    "Hemodialysis",
)
PAY_SOURCES = ("Medicare", "Private insurance", "Medicaid", "Self-pay", "Other", "No charge")
PAY_PROBS = np.array([0.764, 0.0923, 0.0919, 0.0255, 0.0231, 0.0029])
PAY_PROBS = PAY_PROBS / PAY_PROBS.sum()
SEVERITY_PROBS = np.array([0.08, 0.30, 0.38, 0.19, 0.05])
_ECODE_COUNT_PROBS = np.array([0.85, 0.10, 0.05])
_SAMEDAY_PROBS = np.array([0.95, 0.04, 0.01])

# Flags whose presence on *earlier* events raises later readmission risk.
HISTORY_FLAGS = ("RENLFAIL", "LYTES")
_HISTORY_IDX = [COMORBIDITIES.index(f) for f in HISTORY_FLAGS]
# Current-event covariates and their log-odds weights.
_CURRENT_FLAGS = {"CHRNLUNG": 0.5, "DMCX": 0.4, "ANEMDEF": 0.3}
_CURRENT_IDX = {COMORBIDITIES.index(k): w for k, w in _CURRENT_FLAGS.items()}
_PAY_EFFECT = {"Medicaid": 0.3, "Self-pay": -0.4}
_SEVERITY_SLOPE = 0.3
_LOS_SLOPE = 0.05

PAPER_TABLE1 = {
    "n_patients": 272778,
    "age_mean": 72.89,
    "age_sd": 14.0,
    "female_pct": 49.0,
    "hf_event_pct": 66.94,
    "readmission_pct": 23.61,
    "timeline_len_mean": 1.88,
    "timeline_len_sd": 1.4,
}


class ConfigError(ValueError):
    """A cohort configuration that cannot be generated."""


@dataclass
class CohortConfig:
    n_patients: int = 1000
    seed: int = 0
    mean_timeline_len: float = 1.88
    sd_timeline_len: float = 1.4
    max_timeline_len: int = 12
    target_readmit_rate: float = 0.2361
    hf_event_share: float = 0.6694
    mean_age: float = 72.89
    sd_age: float = 14.0
    frac_female: float = 0.49
    n_diagnoses: int = 40
    n_procedures: int = 25
    n_mdc: int = 25
    n_income: int = 4
    n_location: int = 6
    n_disposition: int = 6
    history_effect: float = 1.0
    current_effect: float = 1.0
    # relative weights of (prior events, prior readmissions, prior flagged events) in the history term
    history_weights: tuple = (0.1, 0.25, 3.0)
    exclusion_rate: float = 0.0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ConfigError("n_patients must be at least 1")
        for name in ("target_readmit_rate", "hf_event_share", "frac_female", "exclusion_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0 < self.target_readmit_rate < 1:
            raise ConfigError("target_readmit_rate must be strictly between 0 and 1 "
                              "for a logistic readmission model")
        for name in ("n_diagnoses", "n_procedures", "n_mdc", "n_income", "n_location", "n_disposition"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be at least 2")
        if self.n_diagnoses < len(TOP_DIAGNOSES) or self.n_procedures < len(TOP_PROCEDURES):
            raise ConfigError("n_diagnoses/n_procedures must cover the named top categories")
        if not 1 <= self.mean_timeline_len < self.max_timeline_len:
            raise ConfigError("mean_timeline_len must lie in [1, max_timeline_len)")
        if len(self.history_weights) != 3 or min(self.history_weights) < 0:
            raise ConfigError("history_weights must be three non-negative numbers")
        if self.sd_age < 0 or self.history_effect < 0:
            raise ConfigError("sd_age and history_effect must be non-negative")
        if self.mean_timeline_len > 1 and not 0 <= self._non_last_hf_prob() <= 1:
            raise ConfigError("hf_event_share is infeasible for the configured timeline length")

    def _non_last_hf_prob(self) -> float:
        m = self.mean_timeline_len
        if m == 1:
            return 1.0
        return (self.hf_event_share * m - 1.0) / (m - 1.0)


def _zipf_probs(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def length_distribution(mean: float, max_len: int) -> np.ndarray:
    """Probabilities over lengths 1..max_len of a truncated shifted geometric with given mean."""
    k = np.arange(1, max_len + 1)

    def pmf(q):
        w = (1 - q) ** (k - 1)
        return w / w.sum()

    if mean <= 1.0:
        out = np.zeros(max_len)
        out[0] = 1.0
        return out
    q = brentq(lambda q: float(pmf(q) @ k) - mean, 1e-9, 1 - 1e-9)
    return pmf(q)


@dataclass
class _Vocab:
    diagnoses: list
    procedures: list
    dx_probs: np.ndarray
    px_probs: np.ndarray
    mdc_probs: np.ndarray
    comorbid_probs: np.ndarray
    disp_probs: np.ndarray
    loc_probs: np.ndarray


def _vocab(cfg: CohortConfig) -> _Vocab:
    dx = list(TOP_DIAGNOSES) + [f"CCS dx {i:03d}" for i in range(len(TOP_DIAGNOSES), cfg.n_diagnoses)]
    px = list(TOP_PROCEDURES) + [f"CCS px {i:03d}" for i in range(len(TOP_PROCEDURES), cfg.n_procedures)]
    cp = np.linspace(0.05, 0.35, N_COMORBID)[::-1].copy()
    for j in _HISTORY_IDX:
        cp[j] = 0.3
    for j in _CURRENT_IDX:
        cp[j] = 0.3
    return _Vocab(dx, px, _zipf_probs(len(dx)), _zipf_probs(len(px)), _zipf_probs(cfg.n_mdc), cp,
                  _zipf_probs(cfg.n_disposition, 1.5), _zipf_probs(cfg.n_location, 0.8))


@dataclass
class _EventDraw:
    hf: bool
    severity: int
    comorbid: np.ndarray
    los: int
    current_score: float
    flagged: bool


def _draw_event(rng: np.random.Generator, voc: _Vocab, hf: bool, pay: str) -> _EventDraw:
    severity = _pick(rng, SEVERITY_PROBS) + 1
    comorbid = rng.random(N_COMORBID) < voc.comorbid_probs
    los = int(rng.poisson(3.5)) + 1
    score = _SEVERITY_SLOPE * (severity - 3) + _LOS_SLOPE * (los - 4.5)
    score += sum(w for j, w in _CURRENT_IDX.items() if comorbid[j])
    score += _PAY_EFFECT.get(pay, 0.0)
    flagged = bool(comorbid[_HISTORY_IDX].any())
    return _EventDraw(hf, severity, comorbid, los, score, flagged)


def _draw_skeleton(rng, cfg, voc, len_probs, q_hf):
    """Patient-level draws plus per-event covariates, without days or labels."""
    T = _pick(rng, len_probs) + 1
    pay = PAY_SOURCES[_pick(rng, PAY_PROBS)]
    hf = [bool(rng.random() < q_hf) for _ in range(T - 1)] + [True]
    events = [_draw_event(rng, voc, h, pay) for h in hf]
    return T, pay, events


def _history_term(weights, n_prior, n_readmit, n_flagged):
    a, b, c = weights
    return a * n_prior + b * n_readmit + c * n_flagged


def _simulate_rate(b0: float, cfg: CohortConfig, scores, flagged, hf, u) -> float:
    """HF-event readmission rate of the label process on pre-drawn covariates."""
    P, Tm = scores.shape
    n_readmit = np.zeros(P)
    n_flag = np.zeros(P)
    pos = 0
    tot = 0
    for t in range(Tm):
        valid = ~np.isnan(scores[:, t])
        if not valid.any():
            break
        logit = b0 + cfg.current_effect * scores[valid, t] + cfg.history_effect * _history_term(
            cfg.history_weights, t, n_readmit[valid], n_flag[valid])
        y = u[valid, t] < 1.0 / (1.0 + np.exp(-logit))
        pos += int(np.sum(y & hf[valid, t]))
        tot += int(np.sum(hf[valid, t]))
        n_readmit[valid] += y
        n_flag[valid] += flagged[valid, t]
    return pos / tot


def calibrate_intercept(cfg: CohortConfig, n_pilot: int = 8000, pilot_seed: int = 20240101) -> float:
    """Intercept of the readmission logit that hits ``target_readmit_rate`` on HF events."""
    cfg.validate()
    voc = _vocab(cfg)
    len_probs = length_distribution(cfg.mean_timeline_len, cfg.max_timeline_len)
    q_hf = float(np.clip(cfg._non_last_hf_prob(), 0, 1))
    rng = np.random.default_rng([pilot_seed, cfg.n_diagnoses, cfg.max_timeline_len])
    Tm = cfg.max_timeline_len
    scores = np.full((n_pilot, Tm), np.nan)
    flagged = np.zeros((n_pilot, Tm), dtype=bool)
    hf = np.zeros((n_pilot, Tm), dtype=bool)
    for i in range(n_pilot):
        T, _, events = _draw_skeleton(rng, cfg, voc, len_probs, q_hf)
        for t, e in enumerate(events):
            scores[i, t] = e.current_score
            flagged[i, t] = e.flagged
            hf[i, t] = e.hf
    u = rng.random((n_pilot, Tm))
    f = lambda b: _simulate_rate(b, cfg, scores, flagged, hf, u) - cfg.target_readmit_rate
    lo, hi = -30.0, 30.0
    if f(lo) > 0 or f(hi) < 0:
        raise ConfigError("target_readmit_rate is unreachable with this history_effect")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _pick(rng, probs) -> int:
    return min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), len(probs) - 1)


def _sample_without_replacement(rng, probs, k) -> np.ndarray:
    """``k`` distinct indices drawn sequentially proportional to ``probs`` (Gumbel top-k)."""
    with np.errstate(divide="ignore"):
        keys = np.log(probs) + rng.gumbel(size=len(probs))
    return np.argsort(-keys, kind="stable")[:k]


def _categorical(rng, n, probs=None) -> str:
    return str((int(rng.integers(n)) if probs is None else _pick(rng, probs)) + 1)


def _make_claim(rng, cfg, voc, pid, ev: _EventDraw, admit, pay, age, female, income, loc,
                resident) -> Claim:
    n_dx = int(rng.integers(3, 16))
    if ev.hf:
        others = [d for d in _sample_without_replacement(rng, voc.dx_probs, n_dx) if d != 0][: n_dx - 1]
        dx = [CHF] + [voc.diagnoses[d] for d in others]
        mdc = "5" if rng.random() < 0.9 else _categorical(rng, cfg.n_mdc, voc.mdc_probs)
    else:
        p = voc.dx_probs.copy()
        p[0] = 0.0
        p /= p.sum()
        picks = _sample_without_replacement(rng, p, n_dx)
        dx = [voc.diagnoses[d] for d in picks]
        mdc = _categorical(rng, cfg.n_mdc, voc.mdc_probs)
    n_px = int(rng.integers(0, 6))
    px = [voc.procedures[j] for j in _sample_without_replacement(rng, voc.px_probs, n_px)]
    pclass = [str(int(rng.integers(1, 5))) for _ in px]
    n_ch = int(rng.integers(0, 9))
    chronic = [str(int(c)) for c in rng.integers(1, 19, size=n_ch)]
    ecodes = [str(int(c)) for c in rng.integers(1, 21, size=_pick(rng, _ECODE_COUNT_PROBS))]
    discharge = admit + ev.los
    month = int(np.clip(discharge // 31, 0, 11)) + 1
    return Claim(
        patient_id=pid, admit_day=int(admit), discharge_day=int(discharge), primary_hf=ev.hf,
        diagnosis_fields=tuple(dx), procedure_fields=tuple(px), chronic_fields=tuple(chronic),
        ecode_fields=tuple(ecodes), procedure_class_fields=tuple(pclass),
        comorbidity_flags=tuple(bool(b) for b in ev.comorbid), mdc=mdc,
        risk_mortality=str(min(5, max(1, ev.severity + int(rng.integers(-1, 2))))),
        severity=str(ev.severity), or_proc=bool(rng.random() < 0.1), n_chronic=len(set(chronic)),
        age=float(age), gender=bool(female), income_quartile=income, location=loc,
        resident=resident, los=ev.los, aweekend=bool(admit % 7 in (5, 6)),
        discharge_month=str(month),
        disposition=_categorical(rng, cfg.n_disposition, voc.disp_probs),
        pay_source=pay, sameday=str(_pick(rng, _SAMEDAY_PROBS)),
        elective=bool(rng.random() < 0.1), rehab=bool(rng.random() < 0.03),
    )


def _patient_claims(cfg, voc, len_probs, q_hf, b0, index: int) -> list[Claim]:
    rng = np.random.default_rng([cfg.seed, index])
    pid = f"P{index:07d}"
    T, pay, events = _draw_skeleton(rng, cfg, voc, len_probs, q_hf)
    u = rng.random(T)
    age = float(np.clip(np.round(rng.normal(cfg.mean_age, cfg.sd_age)), MIN_AGE, 110))
    if cfg.exclusion_rate > 0 and rng.random() < cfg.exclusion_rate:
        age = MIN_AGE - 1
    female = rng.random() < cfg.frac_female
    income = _categorical(rng, cfg.n_income)
    loc = _categorical(rng, cfg.n_location, voc.loc_probs)
    resident = bool(rng.random() < 0.95)

    admits, follow_admit = [], None
    day = int(rng.integers(0, 61))
    n_readmit = n_flag = 0
    for t, ev in enumerate(events):
        admits.append(day)
        logit = b0 + cfg.current_effect * ev.current_score + cfg.history_effect * _history_term(
            cfg.history_weights, t, n_readmit, n_flag)
        y = u[t] < 1.0 / (1.0 + np.exp(-logit))
        gap = int(rng.integers(0, READMIT_WINDOW_DAYS + 1)) if y else \
            READMIT_WINDOW_DAYS + int(rng.geometric(1 / 30.0))
        n_readmit += int(y)
        n_flag += int(ev.flagged)
        day += ev.los + gap
        if t == T - 1 and (y or rng.random() < 0.3):
            follow_admit = day
    # keep the first HF admission inside the Jan-Nov inclusion window
    first_hf = admits[next(t for t, ev in enumerate(events) if ev.hf)]
    shift = max(0, first_hf - (WINDOW_END_DAY - 1))
    claims = [_make_claim(rng, cfg, voc, pid, ev, a - shift, pay, age, female, income, loc, resident)
              for ev, a in zip(events, admits)]
    if follow_admit is not None:
        follow = _draw_event(rng, voc, False, pay)
        claims.append(_make_claim(rng, cfg, voc, pid, follow, follow_admit - shift, pay, age, female,
                                  income, loc, resident))
    return claims


def generate(cfg: CohortConfig, workers: int = 1) -> list[Claim]:
    """Claims for ``cfg.n_patients`` patients; deterministic in ``cfg`` (and independent of ``workers``)."""
    cfg.validate()
    b0 = calibrate_intercept(cfg)
    voc = _vocab(cfg)
    len_probs = length_distribution(cfg.mean_timeline_len, cfg.max_timeline_len)
    q_hf = float(np.clip(cfg._non_last_hf_prob(), 0, 1))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial
        fn = partial(_patient_claims, cfg, voc, len_probs, q_hf, b0)
        with ProcessPoolExecutor(workers) as ex:
            chunks = list(ex.map(fn, range(cfg.n_patients), chunksize=256))
    else:
        chunks = [_patient_claims(cfg, voc, len_probs, q_hf, b0, i) for i in range(cfg.n_patients)]
    return [c for chunk in chunks for c in chunk]


# -- summaries ----------------------------------------------------------------

@dataclass
class CohortSummary:
    n_patients: int
    n_claims: int
    age_mean: float
    age_sd: float
    female_pct: float
    pay_source_pct: dict
    hf_event_pct: float
    readmission_pct: float
    timeline_len_mean: float
    timeline_len_sd: float
    top_diagnoses: list
    top_procedures: list
    reference: dict = field(default_factory=lambda: dict(PAPER_TABLE1))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def table(self) -> str:
        ref = self.reference
        rows = [
            ("Patients", f"{self.n_patients}", f"{ref['n_patients']}"),
            ("Age, mean (SD)", f"{self.age_mean:.2f} ({self.age_sd:.1f})",
             f"{ref['age_mean']} ({ref['age_sd']:g})"),
            ("Gender female, %", f"{self.female_pct:.1f}", f"{ref['female_pct']:g}"),
            ("HF events, %", f"{self.hf_event_pct:.2f}", f"{ref['hf_event_pct']}"),
            ("30-day readmission, %", f"{self.readmission_pct:.2f}", f"{ref['readmission_pct']}"),
            ("Timeline length, mean (SD)", f"{self.timeline_len_mean:.2f} ({self.timeline_len_sd:.2f})",
             f"{ref['timeline_len_mean']} ({ref['timeline_len_sd']})"),
        ]
        rows += [(f"Pay source {k}, %", f"{v:.2f}", "") for k, v in self.pay_source_pct.items()]
        rows += [(f"Top dx: {k}", str(n), "") for k, n in self.top_diagnoses]
        rows += [(f"Top px: {k}", str(n), "") for k, n in self.top_procedures]
        w = max(len(r[0]) for r in rows)
        lines = [f"{'Variable':<{w}}  {'Synthetic':>16}  {'Paper':>16}"]
        lines += [f"{a:<{w}}  {b:>16}  {c:>16}" for a, b, c in rows]
        return "\n".join(lines)


def summarize(claims: list[Claim]) -> CohortSummary:
    """Table-1 style panel computed over the labeled timelines built from ``claims``."""
    if not claims:
        raise ValueError("summarize needs at least one claim")
    tls = build_labeled(claims)
    if not tls:
        raise ValueError("no patient passes the cohort inclusion rules")
    ages = np.array([tl.events[-1].age for tl in tls])
    female = np.mean([tl.events[-1].gender for tl in tls]) * 100
    events = [e for tl in tls for e in tl.events]
    labels = [(y, e.primary_hf) for tl in tls for e, y in zip(tl.events, tl.labels)]
    hf_labels = [y for y, hf in labels if hf]
    lens = np.array([tl.T for tl in tls])
    pay = Counter(e.pay_source for e in events)
    dx = Counter(d for e in events for d in e.diagnosis_fields)
    px = Counter(p for e in events for p in e.procedure_fields)
    return CohortSummary(
        n_patients=len(tls), n_claims=len(claims),
        age_mean=float(ages.mean()), age_sd=float(ages.std()),
        female_pct=float(female),
        pay_source_pct={k: 100.0 * n / len(events) for k, n in pay.most_common()},
        hf_event_pct=100.0 * len(hf_labels) / len(events),
        readmission_pct=100.0 * float(np.mean(hf_labels)),
        timeline_len_mean=float(lens.mean()), timeline_len_sd=float(lens.std()),
        top_diagnoses=dx.most_common(5), top_procedures=px.most_common(5),
    )
