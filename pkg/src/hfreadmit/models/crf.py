"""Linear-chain CRF labelers over linear, feed-forward, or recurrent features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..crf import forward_backward_batch, nll_batch
from ..nn import Activation, Dense, Dropout
from ..numerics import glorot_uniform
from .base import Model, Stack
from .recurrent import RecurrentConfig, recurrent_stack

K = 2


@dataclass
class CrfConfig:
    potentials: str = "pairwise"          # "unary" or "pairwise"
    features: str = "linear"              # "linear", "neural" or "recurrent"
    # neural / recurrent feature blocks
    input_embed_dim: int = 0
    output_embed_dim: int = 0
    nonlinearity: str = "tanh"
    p_dropout: float = 0.15
    cell_type: str = "gru"
    hidden: int = 128
    n_layers: int = 1
    l2: float = 1e-2
    batch_size: int = 64
    lr: float = 1e-3
    clip_norm: float = 5.0

    def validate(self):
        if self.potentials not in ("unary", "pairwise"):
            raise ValueError(f"unknown potential variant {self.potentials!r}")
        if self.features not in ("linear", "neural", "recurrent"):
            raise ValueError(f"unknown feature provider {self.features!r}")
        if not 0 <= self.p_dropout < 1:
            raise ValueError("p_dropout must lie in [0, 1)")


def _neural_stack(cfg: CrfConfig, d: int):
    """Input embedding, dropout, optional second embedding. At least one nonlinear layer is kept."""
    e1 = cfg.input_embed_dim or (max(d // 2, 1) if not cfg.output_embed_dim else 0)
    layers, dim = [], d
    for name, width in (("embed_in", e1), ("embed_out", cfg.output_embed_dim)):
        if width > 0:
            layers += [Dense(name, dim, width), Activation(cfg.nonlinearity)]
            if cfg.p_dropout > 0:
                layers.append(Dropout(cfg.p_dropout))
            dim = width
    return Stack(layers), dim


class CrfModel(Model):
    family = "crf"
    clip = True

    def _build(self, rng):
        cfg = self.config
        cfg.validate()
        if cfg.features == "linear":
            self.body, D = Stack([]), self.d
        elif cfg.features == "neural":
            self.body, D = _neural_stack(cfg, self.d)
        else:
            rc = RecurrentConfig(cell_type=cfg.cell_type, hidden=cfg.hidden, n_layers=cfg.n_layers,
                                 input_embed_dim=cfg.input_embed_dim, output_embed_dim=cfg.output_embed_dim,
                                 nonlinearity=cfg.nonlinearity, p_dropout=cfg.p_dropout)
            self.body, D = recurrent_stack(rc, self.d)
        self.body.init(self.params, rng)
        P = self.params
        if cfg.potentials == "unary":
            P["crf.Wu"] = glorot_uniform(rng, D, K)
            P["crf.bu"] = np.zeros(K)
            P["crf.W_trans"] = np.zeros((K, K))
            P["crf.b_start"] = np.zeros(K)
        else:
            P["crf.Ws"] = glorot_uniform(rng, D, K)
            P["crf.bs"] = np.zeros(K)
            P["crf.Wp"] = glorot_uniform(rng, D, K * K)
            P["crf.bp"] = np.zeros(K * K)
        self.D = D

    def potentials(self, X, rng=None):
        """Canonical batched potentials ``start (B, K)`` and ``trans (B, T-1, K, K)``."""
        P = self.params
        Z = self.body.forward(P, X, rng=rng)
        self._Z = Z
        B, T, _ = Z.shape
        if self.config.potentials == "unary":
            U = Z @ P["crf.Wu"] + P["crf.bu"]
            start = P["crf.b_start"] + U[:, 0]
            trans = U[:, 1:, None, :] + P["crf.W_trans"]
        else:
            start = Z[:, 0] @ P["crf.Ws"] + P["crf.bs"]
            trans = (Z[:, 1:] @ P["crf.Wp"] + P["crf.bp"]).reshape(B, T - 1, K, K)
        return start, trans

    def _potential_backward(self, d_start, d_trans, G):
        P, Z = self.params, self._Z
        B, T, D = Z.shape
        dZ = np.zeros_like(Z)
        if self.config.potentials == "unary":
            dU = np.zeros((B, T, K))
            dU[:, 0] = d_start
            dU[:, 1:] = d_trans.sum(2)
            G["crf.b_start"] = d_start.sum(0)
            G["crf.W_trans"] = d_trans.sum((0, 1))
            G["crf.Wu"] = Z.reshape(-1, D).T @ dU.reshape(-1, K)
            G["crf.bu"] = dU.reshape(-1, K).sum(0)
            dZ = dU @ P["crf.Wu"].T
        else:
            G["crf.Ws"] = Z[:, 0].T @ d_start
            G["crf.bs"] = d_start.sum(0)
            dP = d_trans.reshape(B, T - 1, K * K)
            G["crf.Wp"] = Z[:, 1:].reshape(-1, D).T @ dP.reshape(-1, K * K)
            G["crf.bp"] = dP.reshape(-1, K * K).sum(0)
            dZ[:, 0] = d_start @ P["crf.Ws"].T
            dZ[:, 1:] = dP @ P["crf.Wp"].T
        return dZ

    def _loss(self, batch, cw, rng, train, update_state):
        start, trans = self.potentials(batch.X, rng if train else None)
        nll, d_start, d_trans, _ = nll_batch(start, trans, batch.y, batch.lengths)
        w = cw[batch.last_labels] / batch.B
        G = {}
        dZ = self._potential_backward(d_start * w[:, None], d_trans * w[:, None, None, None], G)
        self.body.backward(self.params, dZ, G)
        return float(w @ nll), G

    def marginals(self, batch):
        start, trans = self.potentials(batch.X)
        return forward_backward_batch(start, trans, batch.lengths)[3]

    def _predict(self, batch):
        return self.marginals(batch)[np.arange(batch.B), batch.last, 1]
