"""Encoded timelines and padded mini-batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .claims import PatientTimeline, index_mask
from .featurizer import FeatureSpec, encode_timeline


@dataclass
class EncodedTimeline:
    patient_id: str
    X: np.ndarray          # (T, d)
    y: np.ndarray          # (T,) int labels
    hf: np.ndarray         # (T,) index-event mask

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def last_label(self) -> int:
        return int(self.y[-1])


def encode_dataset(spec: FeatureSpec, timelines: Sequence[PatientTimeline]) -> list[EncodedTimeline]:
    out = []
    for tl in timelines:
        if any(lab is None for lab in tl.labels):
            raise ValueError(f"timeline {tl.patient_id} is not labeled")
        out.append(EncodedTimeline(tl.patient_id, encode_timeline(spec, tl),
                                   np.asarray(tl.labels, dtype=int), np.asarray(index_mask(tl))))
    return out


@dataclass
class Batch:
    X: np.ndarray        # (B, T, d), zero rows past each length
    y: np.ndarray        # (B, T)
    hf: np.ndarray       # (B, T) bool, False on padding
    lengths: np.ndarray  # (B,)

    @property
    def B(self) -> int:
        return len(self.lengths)

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.T)[None, :] < self.lengths[:, None]

    @property
    def last(self) -> np.ndarray:
        """Position of the last index event in each row."""
        hf = self.hf & self.valid
        pos = self.T - 1 - np.argmax(hf[:, ::-1], axis=1)
        return np.where(hf.any(1), pos, self.lengths - 1)

    @property
    def last_labels(self) -> np.ndarray:
        return self.y[np.arange(self.B), self.last]

    def last_events(self) -> np.ndarray:
        return self.X[np.arange(self.B), self.last]


def make_batch(items: Sequence[EncodedTimeline], max_len: int | None = None) -> Batch:
    """Pad to a common length. ``max_len`` fixes the width; longer timelines keep their most recent events."""
    d = items[0].X.shape[1]
    lens = [min(it.T, max_len) if max_len else it.T for it in items]
    T = max_len or max(lens)
    X = np.zeros((len(items), T, d))
    y = np.zeros((len(items), T), dtype=int)
    hf = np.zeros((len(items), T), dtype=bool)
    for i, (it, n) in enumerate(zip(items, lens)):
        X[i, :n] = it.X[it.T - n:]
        y[i, :n] = it.y[it.T - n:]
        hf[i, :n] = it.hf[it.T - n:]
    return Batch(X, y, hf, np.asarray(lens))
