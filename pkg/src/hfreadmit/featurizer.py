"""Vocabulary fitting and the per-event feature vector."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .claims import Claim, PatientTimeline, index_mask

DEFAULT_COUNT_THRESHOLD = 5
PAPER_COUNT_THRESHOLD = 1000

COMORBIDITIES = (
    "AIDS", "ALCOHOL", "ANEMDEF", "ARTH", "BLDLOSS", "CHF", "CHRNLUNG", "COAG",
    "DEPRESS", "DM", "DMCX", "DRUG", "HTN_C", "HYPOTHY", "LIVER", "LYMPH", "LYTES",
    "METS", "NEURO", "OBESE", "PARA", "PERIVASC", "PSYCH", "PULMCIRC", "RENLFAIL",
    "TUMOR", "ULCER", "VALVE", "WGHTLOSS",
)
BCHRONIC = tuple(str(i) for i in range(1, 19))
ECODE = tuple(str(i) for i in range(1, 21))
PCLASS = tuple(str(i) for i in range(1, 5))
RISK_MORTALITY = tuple(str(i) for i in range(1, 6))
SEVERITY = tuple(str(i) for i in range(1, 6))

CONTINUOUS = ("n_chronic", "age", "los", "delta_t", "countindex", "countevents")

# Data-driven vocabularies; only diagnoses and procedures are count-thresholded.
_DATA_VOCABS = {
    "mdc": "mdc", "income": "income_quartile", "ploc": "location", "dmonth": "discharge_month",
    "dispuniform": "disposition", "paysrc": "pay_source", "sameday": "sameday",
}


@dataclass
class FeatureSpec:
    vocab_diagnosis: list
    vocab_procedures: list
    vocab_mdc: list
    vocab_income: list
    vocab_ploc: list
    vocab_dmonth: list
    vocab_dispuniform: list
    vocab_paysrc: list
    vocab_sameday: list
    count_threshold: int = DEFAULT_COUNT_THRESHOLD
    vocab_bchronic: list = field(default_factory=lambda: list(BCHRONIC))
    vocab_ecode: list = field(default_factory=lambda: list(ECODE))
    vocab_pclass: list = field(default_factory=lambda: list(PCLASS))
    vocab_comorbid: list = field(default_factory=lambda: list(COMORBIDITIES))
    vocab_riskmortal: list = field(default_factory=lambda: list(RISK_MORTALITY))
    vocab_severity: list = field(default_factory=lambda: list(SEVERITY))
    scale_mean: dict = field(default_factory=lambda: {k: 0.0 for k in CONTINUOUS})
    scale_sd: dict = field(default_factory=lambda: {k: 1.0 for k in CONTINUOUS})
    layout: list = field(default_factory=list)
    d: int = 0

    def __post_init__(self):
        self._lookup = {}
        if not self.layout:
            self.layout, self.d = _build_layout(self)
        self._offsets = {name: (off, width) for name, off, width in self.layout}
        for name in ("diagnosis", "procedures", "bchronic", "ecode", "pclass", "comorbid", "mdc",
                     "riskmortal", "severity", "income", "ploc", "dmonth", "dispuniform", "paysrc",
                     "sameday"):
            self._lookup[name] = {c: i for i, c in enumerate(getattr(self, f"vocab_{name}"))}

    def block(self, name: str) -> slice:
        off, width = self._offsets[name]
        return slice(off, off + width)

    def feature_names(self) -> list[str]:
        names = []
        for block, _, width in self.layout:
            vocab = _BLOCK_VOCAB.get(block)
            if vocab is None:
                names.append(block)
            else:
                names.extend(f"{block}:{c}" for c in getattr(self, f"vocab_{vocab}"))
        return names

    def continuous_index(self) -> dict:
        return {name: self._offsets[name][0] for name in CONTINUOUS}

    def to_json(self) -> str:
        d = asdict(self)
        d["layout"] = [list(x) for x in self.layout]
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSpec":
        d = json.loads(text)
        d["layout"] = [tuple(x) for x in d["layout"]]
        return cls(**d)


# block name -> vocabulary attribute suffix; scalar blocks are absent
_BLOCK_VOCAB = {
    "diag1": "diagnosis", "diag2": "diagnosis", "diag3": "diagnosis", "countdiag": "diagnosis",
    "proc1": "procedures", "proc2": "procedures", "proc3": "procedures", "countproc": "procedures",
    "bchronic1": "bchronic", "bchronic2": "bchronic", "bchronic3": "bchronic",
    "countbchronic": "bchronic", "ecode1": "ecode", "countecode": "ecode", "countpclass": "pclass",
    "comorbid": "comorbid", "mdc": "mdc", "riskmortal": "riskmortal", "severity": "severity",
    "income": "income", "ploc": "ploc", "dmonth": "dmonth", "dispuniform": "dispuniform",
    "paysrc": "paysrc", "sameday": "sameday",
}

_ORDER = (
    "diag1", "diag2", "diag3", "countdiag", "proc1", "proc2", "proc3", "countproc",
    "bchronic1", "bchronic2", "bchronic3", "countbchronic", "ecode1", "countecode", "countpclass",
    "comorbid", "mdc", "riskmortal", "severity", "or_proc", "n_chronic",
    # socio-demographics
    "age", "gender", "income", "ploc", "resident",
    # event block
    "los", "delta_t", "aweekend", "dmonth", "dispuniform", "paysrc", "sameday", "elective", "rehab",
    "countindex", "countevents",
)

ONE_HOT_BLOCKS = ("diag1", "diag2", "diag3", "proc1", "proc2", "proc3", "bchronic1", "bchronic2",
                  "bchronic3", "ecode1", "mdc", "riskmortal", "severity", "income", "ploc",
                  "dmonth", "dispuniform", "paysrc", "sameday")
COUNT_BLOCKS = {"countdiag": 25, "countproc": 15, "countbchronic": 25, "countecode": 4,
                "countpclass": 15}


def _build_layout(spec: FeatureSpec):
    layout = []
    off = 0
    for name in _ORDER:
        vocab = _BLOCK_VOCAB.get(name)
        width = 1 if vocab is None else len(getattr(spec, f"vocab_{vocab}"))
        layout.append((name, off, width))
        off += width
    return layout, off


def _thresholded(counter: Counter, threshold: int) -> list:
    return sorted(k for k, n in counter.items() if n >= threshold and k != "")


def fit_spec(train_timelines: Sequence[PatientTimeline],
             count_threshold: int = DEFAULT_COUNT_THRESHOLD, standardize: bool = True) -> FeatureSpec:
    """Fit vocabularies (and continuous-feature scaling) on training timelines."""
    if not train_timelines:
        raise ValueError("fit_spec needs at least one training timeline")
    dx, px = Counter(), Counter()
    others = {k: Counter() for k in _DATA_VOCABS}
    for tl in train_timelines:
        for e in tl.events:
            dx.update(e.diagnosis_fields)
            px.update(e.procedure_fields)
            for k, attr in _DATA_VOCABS.items():
                others[k][str(getattr(e, attr))] += 1
    vocab_dx = _thresholded(dx, count_threshold)
    if not vocab_dx:
        raise ValueError(f"count threshold {count_threshold} leaves no diagnosis categories")
    spec = FeatureSpec(
        vocab_diagnosis=vocab_dx,
        vocab_procedures=_thresholded(px, count_threshold),
        count_threshold=count_threshold,
        **{f"vocab_{k}": _thresholded(c, 1) for k, c in others.items()},
    )
    if standardize:
        raw = np.concatenate([encode_timeline(spec, tl, standardize=False) for tl in train_timelines])
        idx = spec.continuous_index()
        for name, j in idx.items():
            col = raw[:, j]
            sd = float(col.std())
            spec.scale_mean[name] = float(col.mean())
            spec.scale_sd[name] = sd if sd > 0 else 1.0
    return spec


@dataclass
class EventContext:
    """Running history up to and including the event being encoded."""
    countindex: int
    countevents: int
    prev_discharge_day: int | None


@dataclass
class EventVector:
    values: np.ndarray
    index_flag: bool


def _one_hot(x, spec, block, vocab, value):
    j = spec._lookup[vocab].get(str(value))
    if j is not None:
        x[spec.block(block).start + j] = 1.0


def _counts(x, spec, block, vocab, values):
    lut = spec._lookup[vocab]
    base = spec.block(block).start
    for v in values:
        j = lut.get(str(v))
        if j is not None:
            x[base + j] += 1.0


def _encode_raw(spec: FeatureSpec, c: Claim, ctx: EventContext) -> np.ndarray:
    x = np.zeros(spec.d)
    for k, block in enumerate(("diag1", "diag2", "diag3")):
        if len(c.diagnosis_fields) > k:
            _one_hot(x, spec, block, "diagnosis", c.diagnosis_fields[k])
    _counts(x, spec, "countdiag", "diagnosis", c.diagnosis_fields)
    for k, block in enumerate(("proc1", "proc2", "proc3")):
        if len(c.procedure_fields) > k:
            _one_hot(x, spec, block, "procedures", c.procedure_fields[k])
    _counts(x, spec, "countproc", "procedures", c.procedure_fields)
    for k, block in enumerate(("bchronic1", "bchronic2", "bchronic3")):
        if len(c.chronic_fields) > k:
            _one_hot(x, spec, block, "bchronic", c.chronic_fields[k])
    _counts(x, spec, "countbchronic", "bchronic", c.chronic_fields)
    if c.ecode_fields:
        _one_hot(x, spec, "ecode1", "ecode", c.ecode_fields[0])
    _counts(x, spec, "countecode", "ecode", c.ecode_fields)
    _counts(x, spec, "countpclass", "pclass", c.procedure_class_fields)
    x[spec.block("comorbid")] = np.asarray(c.comorbidity_flags, dtype=np.float64)
    _one_hot(x, spec, "mdc", "mdc", c.mdc)
    _one_hot(x, spec, "riskmortal", "riskmortal", c.risk_mortality)
    _one_hot(x, spec, "severity", "severity", c.severity)
    x[spec.block("or_proc")] = float(c.or_proc)
    x[spec.block("n_chronic")] = c.n_chronic
    x[spec.block("age")] = c.age
    x[spec.block("gender")] = float(c.gender)
    _one_hot(x, spec, "income", "income", c.income_quartile)
    _one_hot(x, spec, "ploc", "ploc", c.location)
    x[spec.block("resident")] = float(c.resident)
    x[spec.block("los")] = c.los
    dt = 0 if ctx.prev_discharge_day is None else c.admit_day - ctx.prev_discharge_day
    x[spec.block("delta_t")] = dt
    x[spec.block("aweekend")] = float(c.aweekend)
    _one_hot(x, spec, "dmonth", "dmonth", c.discharge_month)
    _one_hot(x, spec, "dispuniform", "dispuniform", c.disposition)
    _one_hot(x, spec, "paysrc", "paysrc", c.pay_source)
    _one_hot(x, spec, "sameday", "sameday", c.sameday)
    x[spec.block("elective")] = float(c.elective)
    x[spec.block("rehab")] = float(c.rehab)
    x[spec.block("countindex")] = ctx.countindex
    x[spec.block("countevents")] = ctx.countevents
    return x


def standardize_inplace(spec: FeatureSpec, X: np.ndarray) -> np.ndarray:
    for name, j in spec.continuous_index().items():
        X[..., j] = (X[..., j] - spec.scale_mean[name]) / spec.scale_sd[name]
    return X


def encode_event(spec: FeatureSpec, claim: Claim, ctx: EventContext,
                 standardize: bool = True) -> EventVector:
    x = _encode_raw(spec, claim, ctx)
    if standardize:
        standardize_inplace(spec, x)
    return EventVector(x, bool(claim.primary_hf))


def encode_timeline(spec: FeatureSpec, tl: PatientTimeline, standardize: bool = True) -> np.ndarray:
    """Stack the event vectors of a timeline into a ``T x d`` matrix."""
    rows = []
    n_index = 0
    prev = None
    for t, e in enumerate(tl.events):
        n_index += int(e.primary_hf)
        rows.append(_encode_raw(spec, e, EventContext(n_index, t + 1, prev)))
        prev = e.discharge_day
    X = np.vstack(rows)
    if standardize:
        standardize_inplace(spec, X)
    return X


def encode_timeline_vectors(spec: FeatureSpec, tl: PatientTimeline, standardize: bool = True):
    X = encode_timeline(spec, tl, standardize)
    return [EventVector(x, flag) for x, flag in zip(X, index_mask(tl))]
