"""Claims, patient timelines and 30-day all-cause readmission labels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Sequence

READMIT_WINDOW_DAYS = 30
MIN_AGE = 18
# Day offset where December starts; an HF admission before it leaves room
# for a 30-day follow-up inside the data year.
WINDOW_END_DAY = 334

MAX_DIAGNOSES = 25
MAX_PROCEDURES = 15
MAX_CHRONIC = 25
MAX_ECODES = 4
MAX_PCLASS = 15
N_COMORBID = 29

LIST_FIELDS = {
    "diagnosis_fields": MAX_DIAGNOSES,
    "procedure_fields": MAX_PROCEDURES,
    "chronic_fields": MAX_CHRONIC,
    "ecode_fields": MAX_ECODES,
    "procedure_class_fields": MAX_PCLASS,
}


@dataclass(frozen=True)
class Claim:
    patient_id: str
    admit_day: int
    discharge_day: int
    primary_hf: bool
    diagnosis_fields: tuple = ()
    procedure_fields: tuple = ()
    chronic_fields: tuple = ()
    ecode_fields: tuple = ()
    procedure_class_fields: tuple = ()
    comorbidity_flags: tuple = (False,) * N_COMORBID
    mdc: str = ""
    risk_mortality: str = ""
    severity: str = ""
    or_proc: bool = False
    n_chronic: int = 0
    age: float = 0.0
    gender: bool = False
    income_quartile: str = ""
    location: str = ""
    resident: bool = True
    los: int = 0
    aweekend: bool = False
    discharge_month: str = ""
    disposition: str = ""
    pay_source: str = ""
    sameday: str = ""
    elective: bool = False
    rehab: bool = False

    def __post_init__(self):
        if self.discharge_day < self.admit_day:
            raise ValueError(f"claim for {self.patient_id}: discharge before admission")
        if self.los != self.discharge_day - self.admit_day:
            raise ValueError(f"claim for {self.patient_id}: los != discharge_day - admit_day")
        for name, cap in LIST_FIELDS.items():
            if len(getattr(self, name)) > cap:
                raise ValueError(f"claim for {self.patient_id}: {name} longer than {cap}")
        if len(self.comorbidity_flags) != N_COMORBID:
            raise ValueError(f"claim for {self.patient_id}: expected {N_COMORBID} comorbidity flags")


@dataclass
class PatientTimeline:
    """A patient's events in admission order.

    ``followup_admit_day`` is the admission day of the first raw claim after
    the last HF event, kept so the final label survives truncation.
    """

    patient_id: str
    events: list
    labels: list = field(default_factory=list)
    followup_admit_day: int | None = None

    def __post_init__(self):
        if not self.labels:
            self.labels = [None] * len(self.events)
        if len(self.labels) != len(self.events):
            raise ValueError("labels and events differ in length")

    @property
    def T(self) -> int:
        return len(self.events)

    @property
    def last_label(self) -> int:
        return self.labels[-1]


@dataclass
class Exclusion:
    patient_id: str
    reason: str
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps({"patient_id": self.patient_id, "reason": self.reason, "detail": self.detail})


def _sort_key(c: Claim):
    return (c.admit_day, c.discharge_day)


def build_timelines(claims: Iterable[Claim], window_end_day: int = WINDOW_END_DAY,
                    exclusions: list | None = None) -> list[PatientTimeline]:
    """Group claims by patient, sort, apply the HF cohort inclusion rules.

    A patient is kept when some HF admission starts before ``window_end_day``
    with the patient aged 18 or over. Timelines are truncated at the last HF
    event; the next raw admission (if any) is remembered for labeling.
    Rejected patients are appended to ``exclusions`` when a list is given.
    """
    by_patient: dict[str, list[Claim]] = {}
    for c in claims:
        if c.patient_id in (None, ""):
            raise ValueError("claim without patient_id")
        by_patient.setdefault(c.patient_id, []).append(c)

    excluded = exclusions if exclusions is not None else []
    out = []
    for pid in sorted(by_patient):
        events = sorted(by_patient[pid], key=_sort_key)
        overlap = next((i for i in range(1, len(events))
                        if events[i].admit_day < events[i - 1].discharge_day), None)
        if overlap is not None:
            excluded.append(Exclusion(pid, "overlapping_stays",
                                      f"admission on day {events[overlap].admit_day} before discharge "
                                      f"on day {events[overlap - 1].discharge_day}"))
            continue
        if not any(e.primary_hf and e.admit_day < window_end_day and e.age >= MIN_AGE for e in events):
            hf = [e for e in events if e.primary_hf]
            reason = "no_hf_event" if not hf else (
                "under_18" if all(e.age < MIN_AGE for e in hf) else "outside_window")
            excluded.append(Exclusion(pid, reason))
            continue
        last_hf = max(i for i, e in enumerate(events) if e.primary_hf)
        followup = events[last_hf + 1].admit_day if last_hf + 1 < len(events) else None
        out.append(PatientTimeline(pid, events[:last_hf + 1], followup_admit_day=followup))
    return out


def label_timeline(tl: PatientTimeline) -> PatientTimeline:
    """Apply the 30-day rule to every event.

    ``y_t = 1`` iff the next admission starts within 30 days of this
    discharge. Non-index events get the same rule; ``index_mask`` tells them
    apart. An event with no successor is labeled 0.
    """
    ev = tl.events
    labels = []
    for t, e in enumerate(ev):
        nxt = ev[t + 1].admit_day if t + 1 < len(ev) else tl.followup_admit_day
        labels.append(int(nxt is not None and nxt - e.discharge_day <= READMIT_WINDOW_DAYS))
    return replace(tl, labels=labels)


def index_mask(tl: PatientTimeline) -> list[bool]:
    return [bool(e.primary_hf) for e in tl.events]


def build_labeled(claims: Iterable[Claim], **kw) -> list[PatientTimeline]:
    return [label_timeline(t) for t in build_timelines(claims, **kw)]


# -- CSV ----------------------------------------------------------------------

_BOOL_FIELDS = {f.name for f in fields(Claim) if f.type in ("bool",)}
_INT_FIELDS = {"admit_day", "discharge_day", "n_chronic", "los"}
_FLOAT_FIELDS = {"age"}
CSV_COLUMNS = [f.name for f in fields(Claim)]


def _encode_cell(name, value):
    if name in LIST_FIELDS:
        return "|".join(str(v) for v in value)
    if name == "comorbidity_flags":
        return "".join("1" if v else "0" for v in value)
    if name in _BOOL_FIELDS:
        return "1" if value else "0"
    if name in _FLOAT_FIELDS:
        return repr(float(value))
    return str(value)


def _decode_cell(name, raw: str):
    if name in LIST_FIELDS:
        return tuple(v for v in raw.split("|") if v) if raw else ()
    if name == "comorbidity_flags":
        return tuple(ch == "1" for ch in raw)
    if name in _BOOL_FIELDS:
        return raw.strip().lower() in ("1", "true", "yes")
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    return raw


def write_claims_csv(path, claims: Sequence[Claim]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in claims:
            w.writerow([_encode_cell(n, getattr(c, n)) for n in CSV_COLUMNS])


def read_claims_csv(path) -> list[Claim]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        kw = {n: _decode_cell(n, r[n]) for n in CSV_COLUMNS if n in r}
        out.append(Claim(**kw))
    return out


def write_exclusions(path, exclusions: Sequence[Exclusion]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in exclusions:
            fh.write(e.to_json() + "\n")
