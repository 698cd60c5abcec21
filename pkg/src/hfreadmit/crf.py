"""First-order linear-chain CRF inference in log space.

Every potential set is reduced to a canonical pair before inference:

* ``start``  ``(K,)``         score of label ``y_1`` at the first step
* ``trans``  ``(T-1, K, K)``  score of moving ``y_{t-1} -> y_t`` at step ``t >= 2``

A unary parameterisation folds its per-step scores into both, a pairwise
one supplies them directly. The batched routines accept ``(B, ...)`` arrays
plus per-sequence lengths; positions at or beyond a length are ignored.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .numerics import logsumexp


@dataclass
class CrfPotentials:
    """Per-sequence potentials; exactly one of (unary, transition) or pairwise is set.

    ``start`` holds the learned start scores. For the pairwise variant
    ``pairwise[t-1]`` scores the transition into step ``t`` (t = 2..T).
    """

    start: np.ndarray
    unary: np.ndarray | None = None
    transition: np.ndarray | None = None
    pairwise: np.ndarray | None = None

    def __post_init__(self):
        has_unary = self.unary is not None and self.transition is not None
        if has_unary == (self.pairwise is not None):
            raise ValueError("populate either (unary, transition) or pairwise, not both")

    @property
    def T(self) -> int:
        return len(self.unary) if self.unary is not None else len(self.pairwise) + 1

    @property
    def K(self) -> int:
        return len(self.start)

    def canonical(self):
        if self.pairwise is not None:
            return np.asarray(self.start, float), np.asarray(self.pairwise, float)
        u, A = np.asarray(self.unary, float), np.asarray(self.transition, float)
        return self.start + u[0], u[1:, None, :] + A[None, :, :]

    def as_pairwise(self) -> "CrfPotentials":
        s, tr = self.canonical()
        return CrfPotentials(start=s, pairwise=tr)


def potentials_from_features(variant: str, params: dict, Z: np.ndarray, prefix: str = "crf") -> CrfPotentials:
    """Affine potentials from a feature sequence ``Z`` ``(T, D)``.

    ``unary``: ``psi_t = Z_t W_u + b_u`` with a transition matrix ``W_trans``
    and start vector ``b_start``. ``pairwise``: ``psi_t = reshape(Z_t W_p + b_p)``
    for ``t >= 2`` and a start row ``Z_1 W_s + b_s``.
    """
    if variant not in ("unary", "pairwise"):
        raise ValueError(f"unknown potential variant {variant!r}")
    if variant == "unary":
        U = Z @ params[f"{prefix}.Wu"] + params[f"{prefix}.bu"]
        return CrfPotentials(start=params[f"{prefix}.b_start"].copy(), unary=U,
                             transition=params[f"{prefix}.W_trans"].copy())
    K = params[f"{prefix}.bs"].shape[0]
    s = Z[0] @ params[f"{prefix}.Ws"] + params[f"{prefix}.bs"]
    pw = (Z[1:] @ params[f"{prefix}.Wp"] + params[f"{prefix}.bp"]).reshape(-1, K, K)
    return CrfPotentials(start=s, pairwise=pw)


def sequence_score(start, trans, labels) -> float:
    """``F(y) = start[y_1] + sum_t trans[t-1, y_{t-1}, y_t]``."""
    y = list(labels)
    score = float(start[y[0]])
    for t in range(1, len(y)):
        score += float(trans[t - 1, y[t - 1], y[t]])
    return score


# -- batched inference ----------------------------------------------------------

def _valid(lengths, T):
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def forward_backward_batch(start, trans, lengths):
    """Log-space sum-product for a padded batch.

    ``start`` ``(B, K)``, ``trans`` ``(B, T-1, K, K)``. Returns
    ``log_alpha``, ``log_beta`` ``(B, T, K)``, ``log_Z`` ``(B,)``, node
    marginals ``(B, T, K)`` and edge marginals ``(B, T-1, K, K)``; entries
    past each sequence's length are zero in the marginals.
    """
    B, K = start.shape
    T = trans.shape[1] + 1
    lengths = np.asarray(lengths)
    valid = _valid(lengths, T)
    la = np.empty((B, T, K))
    la[:, 0] = start
    for t in range(1, T):
        nxt = logsumexp(la[:, t - 1, :, None] + trans[:, t - 1], axis=1)
        la[:, t] = np.where(valid[:, t, None], nxt, la[:, t - 1])
    log_Z = logsumexp(la[:, T - 1], axis=-1)
    lb = np.zeros((B, T, K))
    for t in range(T - 2, -1, -1):
        nxt = logsumexp(trans[:, t] + lb[:, t + 1, None, :], axis=2)
        lb[:, t] = np.where(valid[:, t + 1, None], nxt, 0.0)
    with np.errstate(over="ignore"):
        node = np.where(valid[:, :, None], np.exp(la + lb - log_Z[:, None, None]), 0.0)
    if T > 1:
        with np.errstate(over="ignore"):
            edge = np.exp(la[:, :-1, :, None] + trans + lb[:, 1:, None, :] - log_Z[:, None, None, None])
        edge = np.where(valid[:, 1:, None, None], edge, 0.0)
    else:
        edge = np.zeros((B, 0, K, K))
    return la, lb, log_Z, node, edge


def gold_scores_batch(start, trans, labels, lengths):
    B, T = labels.shape
    valid = _valid(lengths, T)
    s = start[np.arange(B), labels[:, 0]].copy()
    for t in range(1, T):
        s += np.where(valid[:, t], trans[np.arange(B), t - 1, labels[:, t - 1], labels[:, t]], 0.0)
    return s


def nll_batch(start, trans, labels, lengths):
    """Per-sequence NLL ``log Z - F(y)`` and its gradients w.r.t. ``start`` and ``trans``."""
    B, K = start.shape
    T = labels.shape[1]
    valid = _valid(lengths, T)
    _, _, log_Z, node, edge = forward_backward_batch(start, trans, lengths)
    nll = log_Z - gold_scores_batch(start, trans, labels, lengths)
    d_start = node[:, 0].copy()
    d_start[np.arange(B), labels[:, 0]] -= 1.0
    d_trans = edge.copy()
    for t in range(1, T):
        rows = np.nonzero(valid[:, t])[0]
        d_trans[rows, t - 1, labels[rows, t - 1], labels[rows, t]] -= 1.0
    return nll, d_start, d_trans, node


# -- single-sequence API ----------------------------------------------------------

@dataclass
class TrellisResult:
    log_alpha: np.ndarray
    log_beta: np.ndarray
    log_Z: float
    node_marginals: np.ndarray
    edge_marginals: np.ndarray
    viterbi_path: list
    viterbi_score: float


def forward_backward(pot: CrfPotentials) -> TrellisResult:
    s, tr = pot.canonical()
    la, lb, lz, node, edge = forward_backward_batch(s[None], tr[None], [pot.T])
    path, score = viterbi(pot)
    return TrellisResult(la[0], lb[0], float(lz[0]), node[0], edge[0], path, score)


def viterbi(pot: CrfPotentials):
    """Best labeling and its score; ties go to the lower label index."""
    s, tr = pot.canonical()
    T, K = pot.T, pot.K
    delta = s.copy()
    back = np.zeros((T, K), dtype=int)
    for t in range(1, T):
        cand = delta[:, None] + tr[t - 1]
        back[t] = np.argmax(cand, axis=0)  # first maximum wins
        delta = cand[back[t], np.arange(K)]
    last = int(np.argmax(delta))
    path = [last]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1], float(delta[last])


def enumerate_sequences(pot: CrfPotentials):
    """Brute-force oracle: every labeling with its score, plus ``log Z``."""
    s, tr = pot.canonical()
    paths = list(itertools.product(range(pot.K), repeat=pot.T))
    scores = np.array([sequence_score(s, tr, p) for p in paths])
    return paths, scores, float(logsumexp(scores))


def last_label_marginal(pot: CrfPotentials, label: int = 1) -> float:
    return float(forward_backward(pot).node_marginals[-1, label])
