"""Recurrent sequence labelers and the scheduled-sampling variant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import Batch
from ..nn import Activation, Dense, Dropout, Recurrent
from ..numerics import softmax
from .base import LOSS_VARIANTS, Model, Stack, loss_coefficients, weighted_softmax_ce

SCHEDULES = ("none", "linear", "exponential", "sigmoid")


@dataclass
class RecurrentConfig:
    cell_type: str = "vanilla"
    hidden: int = 16
    n_layers: int = 1
    input_embed_dim: int = 0      # 0 = no input embedding
    output_embed_dim: int = 0     # 0 = no output embedding
    nonlinearity: str = "relu"
    p_dropout: float = 0.35
    loss_variant: str = "Convex_HF_lastHF"
    alpha: float = 0.8
    l2: float = 1e-2
    batch_size: int = 64
    lr: float = 1e-3
    clip_norm: float = 5.0
    ss_schedule: str = "none"
    ss_rho: float = 0.9
    ss_min: float = 0.0           # floor of the linear schedule

    def validate(self):
        if self.hidden < 1 or self.n_layers < 1:
            raise ValueError("hidden and n_layers must be >= 1")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss_variant!r}")
        if self.ss_schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.ss_schedule!r}")
        if not 0 <= self.p_dropout < 1:
            raise ValueError("p_dropout must lie in [0, 1)")


def scheduled_sampling_prob(schedule: str, rho: float, epoch: int, rho_min: float = 0.0) -> float:
    """Teacher-forcing probability at ``epoch``; non-increasing in ``epoch``.

    linear ``max(rho_min, 1 - rho*epoch)``, exponential ``rho**epoch``,
    sigmoid ``rho / (rho + exp(epoch/rho))``.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule == "none":
        return 1.0
    if schedule == "linear":
        if not rho > 0:
            raise ValueError("linear schedule needs a positive slope")
        return max(rho_min, 1.0 - rho * epoch)
    if schedule == "exponential":
        if not 0 < rho < 1:
            raise ValueError("exponential schedule needs 0 < rho < 1")
        return rho ** epoch
    if schedule == "sigmoid":
        if not rho >= 1:
            raise ValueError("sigmoid schedule needs rho >= 1")
        z = epoch / rho
        return 0.0 if z > 700 else rho / (rho + math.exp(z))
    raise ValueError(f"unknown schedule {schedule!r}")


def recurrent_stack(cfg: RecurrentConfig, n_in: int, prefix: str = "") -> tuple[Stack, int]:
    """Input embedding, recurrent layers with dropout, output embedding."""
    layers, dim = [], n_in
    if cfg.input_embed_dim > 0:
        layers += [Dense(f"{prefix}embed_in", dim, cfg.input_embed_dim), Activation(cfg.nonlinearity)]
        dim = cfg.input_embed_dim
    for i in range(cfg.n_layers):
        layers.append(Recurrent(f"{prefix}rnn{i}", cfg.cell_type, dim, cfg.hidden, cfg.nonlinearity))
        dim = cfg.hidden
        if cfg.p_dropout > 0:
            layers.append(Dropout(cfg.p_dropout))
    if cfg.output_embed_dim > 0:
        layers += [Dense(f"{prefix}embed_out", dim, cfg.output_embed_dim), Activation(cfg.nonlinearity)]
        dim = cfg.output_embed_dim
    return Stack(layers), dim


class RecurrentNet(Model):
    """Per-step softmax labeler trained with one of the four sequence objectives."""

    family = "rnn"
    clip = True

    def _build(self, rng):
        self.config.validate()
        self.body, dim = recurrent_stack(self.config, self._n_in())
        self.head = Dense("out", dim, 2)
        self.body.init(self.params, rng)
        self.head.init(self.params, rng)

    def _n_in(self):
        return self.d

    def _logits(self, X, rng=None):
        return self.head.forward(self.params, self.body.forward(self.params, X, rng=rng))

    def _backward(self, dlogits, G):
        dz = self.head.backward(self.params, dlogits, G)
        return self.body.backward(self.params, dz, G)

    def _objective(self, batch: Batch, logits, cw):
        cfg = self.config
        C = loss_coefficients(cfg.loss_variant, batch.hf, batch.valid, batch.last, cfg.alpha)
        l, d = weighted_softmax_ce(logits, batch.y, cw[batch.y])
        loss = float((C * l).sum()) / batch.B
        return loss, d * (C / batch.B)[..., None]

    def _loss(self, batch, cw, rng, train, update_state):
        logits = self._logits(batch.X, rng if train else None)
        loss, dlogits = self._objective(batch, logits, cw)
        G = {}
        self._backward(dlogits, G)
        return loss, G

    def step_probs(self, batch: Batch) -> np.ndarray:
        return softmax(self._logits(batch.X), axis=-1)[..., 1]

    def _predict(self, batch):
        return self.step_probs(batch)[np.arange(batch.B), batch.last]


def augment_previous_labels(X, prev):
    """Append a one-hot of the previous label; ``prev < 0`` means none (t = 1)."""
    B, T, _ = X.shape
    onehot = np.zeros((B, T, 2))
    b, t = np.nonzero(prev >= 0)
    onehot[b, t, prev[b, t]] = 1.0
    return np.concatenate([X, onehot], axis=-1)


class ScheduledSamplingNet(RecurrentNet):
    """Recurrent labeler that also reads the previous event's label.

    During training the previous label is the ground truth with probability
    ``p_teacher`` and otherwise a draw from the model's own prediction for
    that event. At evaluation the greedy prediction is fed back.
    """

    family = "rnnss"

    def __init__(self, config, d, seed=0, t_max=None):
        super().__init__(config, d, seed, t_max)
        self.p_teacher = 1.0

    def _n_in(self):
        return self.d + 2

    def set_epoch(self, epoch: int):
        c = self.config
        self.p_teacher = scheduled_sampling_prob(c.ss_schedule, c.ss_rho, epoch, c.ss_min)

    def _feedback_inputs(self, batch: Batch, teacher, uniforms, rng=None):
        """Resolve previous-label inputs causally.

        Iterating "predict, then refeed" reaches the causal solution in at most
        ``T`` passes; each pass fixes at least one more leading position.
        """
        B, T = batch.y.shape
        prev = np.full((B, T), -1)
        prev[:, 1:] = np.where(teacher[:, 1:], batch.y[:, :-1], 0)
        if teacher[:, 1:].all():
            return augment_previous_labels(batch.X, prev)
        for _ in range(T):
            X = augment_previous_labels(batch.X, prev)
            p1 = softmax(self._logits(X, rng), axis=-1)[..., 1]
            guess = (uniforms[:, :-1] < p1[:, :-1]).astype(int)
            new = prev.copy()
            new[:, 1:] = np.where(teacher[:, 1:], batch.y[:, :-1], guess)
            if np.array_equal(new, prev):
                break
            prev = new
        return augment_previous_labels(batch.X, prev)

    def _loss(self, batch, cw, rng, train, update_state):
        B, T = batch.y.shape
        if self.p_teacher >= 1.0 or rng is None:
            teacher = np.ones((B, T), bool)
            uniforms = np.zeros((B, T))
        else:
            teacher = rng.random((B, T)) < self.p_teacher
            uniforms = rng.random((B, T))
        drop_seed = None if rng is None else rng.integers(2**63)
        # every pass shares one dropout draw so the resolved inputs match the final pass
        fixed = lambda: None if drop_seed is None else np.random.default_rng(drop_seed)
        X = self._feedback_inputs(batch, teacher, uniforms, fixed() if train else None)
        logits = self._logits(X, fixed() if train else None)
        loss, dlogits = self._objective(batch, logits, cw)
        G = {}
        self._backward(dlogits, G)
        return loss, G

    def step_probs(self, batch: Batch) -> np.ndarray:
        B, T = batch.y.shape
        prev = np.full((B, T), -1)
        p1 = np.zeros((B, T))
        for t in range(T):
            X = augment_previous_labels(batch.X[:, :t + 1], prev[:, :t + 1])
            p1[:, t] = softmax(self._logits(X), axis=-1)[:, t, 1]
            if t + 1 < T:
                prev[:, t + 1] = (p1[:, t] > 0.5).astype(int)
        return p1
