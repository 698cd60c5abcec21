"""Shared model plumbing: sequence objectives, layer stacks, the model interface."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from ..data import Batch
from ..nn import Activation, BatchNorm, Dense, Dropout
from ..numerics import l2_penalty, log_softmax, check_finite

LOSS_VARIANTS = ("Convex_HF_lastHF", "LastHF", "Uniform_HF", "Convex_HF_NonHF")


def loss_coefficients(variant: str, hf, valid, last, alpha: float = 0.8) -> np.ndarray:
    """Per-step weights ``C`` with ``L_i = sum_t C[i, t] * l_t``.

    Every variant is linear in the per-step losses, so ``C`` is also the
    gradient of ``L_i`` w.r.t. ``l_t``. An empty event subset contributes
    nothing and its convex weight moves to the other term.
    """
    hf = np.asarray(hf, bool) & np.asarray(valid, bool)
    non = np.asarray(valid, bool) & ~hf
    B, T = hf.shape
    n_hf = hf.sum(1, keepdims=True)
    n_non = non.sum(1, keepdims=True)
    if variant != "LastHF" and (n_hf == 0).any():
        raise ValueError(f"{variant} needs at least one index event per timeline")
    lastm = np.zeros((B, T))
    lastm[np.arange(B), last] = 1.0
    uhf = hf / np.maximum(n_hf, 1)
    if variant == "LastHF":
        return lastm
    if variant == "Uniform_HF":
        return uhf
    if variant == "Convex_HF_lastHF":
        return (1 - alpha) * uhf + alpha * lastm
    if variant == "Convex_HF_NonHF":
        unon = non / np.maximum(n_non, 1)
        a = np.where(n_non > 0, alpha, 1.0)
        return (1 - a) * unon + a * uhf
    raise ValueError(f"unknown loss variant {variant!r}")


def sequence_loss(variant: str, losses, hf_mask, alpha: float = 0.8) -> float:
    """Aggregate one timeline's per-step losses under a loss variant."""
    losses = np.asarray(losses, float)
    hf = np.asarray(hf_mask, bool)[None]
    idx = np.nonzero(hf[0])[0]
    last = idx[-1] if len(idx) else len(losses) - 1
    C = loss_coefficients(variant, hf, np.ones_like(hf), np.array([last]), alpha)
    return float(C[0] @ losses)


def weighted_softmax_ce(logits, y, weights):
    """Per-position ``-w * log softmax(logits)[y]`` and its gradient factor.

    Returns ``(l, dl_dlogits)`` where ``dl_dlogits`` is the gradient of each
    position's loss w.r.t. its own logits.
    """
    lp = log_softmax(logits, axis=-1)
    onehot = np.eye(logits.shape[-1])[y]
    l = -weights * np.take_along_axis(lp, y[..., None], -1)[..., 0]
    d = weights[..., None] * (np.exp(lp) - onehot)
    return l, d


def ff_blocks(prefix, n_in, widths, act="relu", batch_norm=True, p_dropout=0.0):
    """Fully connected blocks: affine, optional batch norm, nonlinearity, dropout."""
    layers, dim = [], n_in
    for i, w in enumerate(widths):
        layers.append(Dense(f"{prefix}{i}", dim, w, bias=not batch_norm))
        if batch_norm:
            layers.append(BatchNorm(f"{prefix}{i}_bn", w))
        layers.append(Activation(act))
        if p_dropout > 0:
            layers.append(Dropout(p_dropout))
        dim = w
    return layers, dim


class Stack:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, params, rng):
        for layer in self.layers:
            layer.init(params, rng)

    def forward(self, P, x, **kw):
        for layer in self.layers:
            x = layer.forward(P, x, **kw)
        return x

    def backward(self, P, dy, G):
        for layer in reversed(self.layers):
            dy = layer.backward(P, dy, G)
        return dy


class Model:
    """Interface shared by every family.

    Subclasses define ``_build`` (layer construction on ``self.params``),
    ``_loss(batch, cw, rng, train, update_state)`` returning the data term
    and its gradients, and ``_predict(batch)`` returning ``p(y_last = 1)``.
    """

    family = ""
    clip = False          # recurrent/CRF models clip the global gradient norm

    def __init__(self, config, d: int, seed: int = 0, t_max: int | None = None):
        self.config = config
        self.d = d
        self.t_max = t_max
        self.params: dict = {}
        self.state: dict = {}
        self._build(np.random.default_rng(seed))

    def _build(self, rng):
        raise NotImplementedError

    @property
    def l2(self) -> float:
        return getattr(self.config, "l2", 0.0)

    @property
    def max_len(self) -> int | None:
        return None

    def loss_and_grads(self, batch: Batch, class_weights=None, rng=None, train=True, update_state=True):
        """Mean weighted loss over the batch plus L2, and gradients for every parameter."""
        cw = np.ones(2) if class_weights is None else np.asarray(class_weights, float)
        loss, G = self._loss(batch, cw, rng, train, update_state)
        pen, pg = l2_penalty(self.params, self.l2)
        for k, v in pg.items():
            G[k] = G.get(k, 0) + v
        for k, v in self.params.items():
            if k not in G:
                G[k] = np.zeros_like(v)
        total = loss + pen
        check_finite("loss", np.asarray(total))
        return total, G

    def predict_last(self, batch: Batch) -> np.ndarray:
        return self._predict(batch)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def config_dict(self) -> dict:
        return asdict(self.config)
