"""Event-view and padded-matrix models: logistic regression, MLP, CNN, CNN-Wide."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..data import Batch
from ..nn import Activation, BatchNorm, Conv2D, Dense, Dropout, Pool2D, WideConv, masked_pool_over_time
from ..numerics import sigmoid, softmax
from .base import Model, Stack, ff_blocks, weighted_softmax_ce


# -- logistic regression ---------------------------------------------------------

@dataclass
class LogisticConfig:
    penalty: str = "l1"          # "l1" or "l2"
    lam: float = 1e-1
    lam_grid: tuple = (1e-3, 1e-2, 1e-1)
    max_iter: int = 5000
    tol: float = 1e-7

    def validate(self):
        if self.penalty not in ("l1", "l2"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


def _logistic_nll(W, b, X, y, w):
    """Mean weighted negative log-likelihood and its gradient."""
    z = X @ W + b
    # log(1 + e^z) - y z, stable for both signs
    nll = np.logaddexp(0.0, z) - y * z
    r = w * (sigmoid(z) - y) / len(y)
    return float(w @ nll) / len(y), X.T @ r, float(r.sum())


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_train(X, y, lam, sample_weight=None, max_iter=5000, tol=1e-7, W0=None, b0=0.0):
    """Class-weighted L1 logistic regression by accelerated proximal gradient.

    Minimises ``mean(w_i * nll_i) + lam * ||W||_1`` with the bias unpenalised.
    The step size is found by backtracking on the smooth part, so iterates that
    land on zero stay exactly zero. Returns ``(W, b, n_iter)``.
    """
    n, d = X.shape
    y = np.asarray(y, float)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
    W = np.zeros(d) if W0 is None else np.array(W0, float)
    b = float(b0)
    VW, vb, tk = W.copy(), b, 1.0
    L = 1.0
    for it in range(1, max_iter + 1):
        f, gW, gb = _logistic_nll(VW, vb, X, y, w)
        while True:
            W_new = soft_threshold(VW - gW / L, lam / L)
            b_new = vb - gb / L
            dW, db = W_new - VW, b_new - vb
            f_new = _logistic_nll(W_new, b_new, X, y, w)[0]
            if f_new <= f + gW @ dW + gb * db + 0.5 * L * (dW @ dW + db * db) + 1e-15:
                break
            L *= 2.0
        gmap = L * np.sqrt(dW @ dW + db * db)
        # restart momentum when the objective goes up
        obj_new = f_new + lam * np.abs(W_new).sum()
        obj_old = _logistic_nll(W, b, X, y, w)[0] + lam * np.abs(W).sum()
        if obj_new > obj_old:
            tk = 1.0
            VW, vb = W.copy(), b
            continue
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        VW = W_new + (tk - 1) / t_next * (W_new - W)
        vb = b_new + (tk - 1) / t_next * (b_new - b)
        W, b, tk = W_new, b_new, t_next
        L = max(L / 1.5, 1e-6)
        if gmap < tol:
            return W, b, it
    _, gW, gb = _logistic_nll(W, b, X, y, w)
    gnorm = np.linalg.norm(soft_threshold(W - gW, lam) - W)
    warnings.warn(f"lasso did not converge in {max_iter} iterations (prox-gradient norm {gnorm:.2e})")
    return W, b, max_iter


def logistic_l2_train(X, y, lam, sample_weight=None, max_iter=2000, tol=1e-10):
    """Class-weighted L2 logistic regression via L-BFGS; bias unpenalised."""
    n, d = X.shape
    y = np.asarray(y, float)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)

    def fun(theta):
        W, b = theta[:d], theta[d]
        f, gW, gb = _logistic_nll(W, b, X, y, w)
        return f + 0.5 * lam * W @ W, np.append(gW + lam * W, gb)

    res = minimize(fun, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15})
    return res.x[:d].copy(), float(res.x[d])


class LogisticModel(Model):
    """``p = sigmoid(W . x_T + b)`` on the last index event."""

    family = "lr"

    def _build(self, rng):
        self.config.validate()
        self.params["lr.W"] = np.zeros(self.d)
        self.params["lr.b"] = np.zeros(1)

    @property
    def l2(self):
        return self.config.lam if self.config.penalty == "l2" else 0.0

    def _loss(self, batch, cw, rng, train, update_state):
        x, y = batch.last_events(), batch.last_labels
        f, gW, gb = _logistic_nll(self.params["lr.W"], self.params["lr.b"][0], x, y, cw[y])
        return f, {"lr.W": gW, "lr.b": np.array([gb])}

    def objective(self, batch, class_weights=None) -> float:
        """Full penalised objective, including the L1 term when applicable."""
        f, _ = self.loss_and_grads(batch, class_weights)
        if self.config.penalty == "l1":
            f += self.config.lam * np.abs(self.params["lr.W"]).sum()
        return f

    def fit(self, X, y, sample_weight=None, lam=None):
        lam = self.config.lam if lam is None else lam
        if self.config.penalty == "l1":
            W, b, _ = lasso_train(X, y, lam, sample_weight, self.config.max_iter, self.config.tol)
        else:
            W, b = logistic_l2_train(X, y, lam, sample_weight)
        self.params["lr.W"], self.params["lr.b"] = W, np.array([b])
        return self

    def predict_events(self, X) -> np.ndarray:
        return sigmoid(X @ self.params["lr.W"] + self.params["lr.b"][0])

    def _predict(self, batch):
        return self.predict_events(batch.last_events())


# -- MLP ---------------------------------------------------------------------------

@dataclass
class MlpConfig:
    n_blocks: int = 2
    divisor: int = 4              # block width = floor(previous width / divisor)
    batch_norm: bool = True
    nonlinearity: str = "relu"
    p_dropout: float = 0.0
    l2: float = 1e-2
    batch_size: int = 128
    lr: float = 1e-3


def block_widths(n_in, divisor, n_blocks):
    widths, dim = [], n_in
    for _ in range(n_blocks):
        dim = max(dim // divisor, 1)
        widths.append(dim)
    return widths


def _last_label_objective(logits, batch: Batch, cw):
    y = batch.last_labels
    l, d = weighted_softmax_ce(logits, y, cw[y])
    return float(l.sum()) / batch.B, d / batch.B


class MlpModel(Model):
    """Feed-forward classifier on the last index event."""

    family = "mlp"

    def _build(self, rng):
        c = self.config
        layers, dim = ff_blocks("fc", self.d, block_widths(self.d, c.divisor, c.n_blocks),
                                c.nonlinearity, c.batch_norm, c.p_dropout)
        self.net = Stack(layers + [Dense("out", dim, 2)])
        self.net.init(self.params, rng)

    def _logits(self, batch, train=False, rng=None, update_state=True):
        return self.net.forward(self.params, batch.last_events(), train=train, rng=rng,
                                state=self.state, update_state=update_state)

    def _loss(self, batch, cw, rng, train, update_state):
        logits = self._logits(batch, train, rng if train else None, update_state)
        loss, d = _last_label_objective(logits, batch, cw)
        G = {}
        self.net.backward(self.params, d, G)
        return loss, G

    def _predict(self, batch):
        return softmax(self._logits(batch), axis=-1)[:, 1]


# -- CNN -------------------------------------------------------------------------

class ChannelBatchNorm(BatchNorm):
    """Batch norm over the channel axis of ``(B, C, H, W)`` maps."""

    def forward(self, P, x, **kw):
        return super().forward(P, x.transpose(0, 2, 3, 1), **kw).transpose(0, 3, 1, 2)

    def backward(self, P, dy, G):
        return super().backward(P, dy.transpose(0, 2, 3, 1), G).transpose(0, 3, 1, 2)


class Flatten:
    def init(self, params, rng):
        pass

    def forward(self, P, x, **_):
        self.shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, P, dy, G):
        return dy.reshape(self.shape)


@dataclass
class CnnConfig:
    kernel: int = 3
    n_kernels: int = 8
    batch_norm: bool = True
    nonlinearity: str = "relu"
    conv_dropout: float = 0.0
    conv_repeats: int = 1         # conv blocks between poolings
    pooling: str = "max"
    block_repeats: int = 2        # pooled blocks
    fc_divisor: int = 3
    fc_batch_norm: bool = True
    fc_nonlinearity: str = "relu"
    fc_dropout: float = 0.0
    fc_repeats: int = 1
    l2: float = 1e-2
    batch_size: int = 16
    lr: float = 1e-3


class CnnModel(Model):
    """Square-kernel convolutions over the padded ``T_max x d`` timeline matrix."""

    family = "cnn"

    def _build(self, rng):
        c = self.config
        if self.t_max is None or self.t_max < 1:
            raise ValueError("CNN needs t_max from the training data")
        layers, ch, H, W = [], 1, self.t_max, self.d
        for j in range(c.block_repeats):
            for i in range(c.conv_repeats):
                layers.append(Conv2D(f"conv{j}_{i}", ch, c.n_kernels, c.kernel, bias=not c.batch_norm))
                ch = c.n_kernels
                if c.batch_norm:
                    layers.append(ChannelBatchNorm(f"conv{j}_{i}_bn", ch))
                layers.append(Activation(c.nonlinearity))
                if c.conv_dropout > 0:
                    layers.append(Dropout(c.conv_dropout))
            layers.append(Pool2D(c.pooling))
            H, W = Pool2D.out_dims(H, W)
        layers.append(Flatten())
        flat = ch * H * W
        fc, dim = ff_blocks("fc", flat, block_widths(flat, c.fc_divisor, c.fc_repeats),
                            c.fc_nonlinearity, c.fc_batch_norm, c.fc_dropout)
        self.net = Stack(layers + fc + [Dense("out", dim, 2)])
        self.net.init(self.params, rng)

    @property
    def max_len(self):
        return self.t_max

    def _logits(self, batch, train=False, rng=None, update_state=True):
        if batch.T != self.t_max:
            raise ValueError(f"batch width {batch.T} differs from t_max {self.t_max}")
        return self.net.forward(self.params, batch.X[:, None], train=train, rng=rng,
                                state=self.state, update_state=update_state)

    def _loss(self, batch, cw, rng, train, update_state):
        logits = self._logits(batch, train, rng if train else None, update_state)
        loss, d = _last_label_objective(logits, batch, cw)
        G = {}
        self.net.backward(self.params, d, G)
        return loss, G

    def _predict(self, batch):
        return softmax(self._logits(batch), axis=-1)[:, 1]


# -- CNN-Wide --------------------------------------------------------------------

@dataclass
class CnnWideConfig:
    widths: tuple = (2, 3)
    n_kernels: int = 32
    batch_norm: bool = True
    nonlinearity: str = "tanh"
    conv_dropout: float = 0.0
    pad: bool = True
    pooling: str = "max"
    fc_divisor: int = 1
    fc_batch_norm: bool = True
    fc_nonlinearity: str = "tanh"
    fc_dropout: float = 0.0
    fc_repeats: int = 1
    l2: float = 1e-2
    batch_size: int = 16
    lr: float = 1e-3


class CnnWideModel(Model):
    """Kernels spanning whole events, pooled over valid time positions."""

    family = "cnn-wide"

    def _build(self, rng):
        c = self.config
        if self.t_max is None or self.t_max < 1:
            raise ValueError("CNN-Wide needs t_max from the training data")
        if not c.pad and max(c.widths) > self.t_max:
            raise ValueError(f"t_max {self.t_max} is shorter than kernel width {max(c.widths)}")
        self.convs = [WideConv(f"wconv{w}", w, self.d, c.n_kernels, c.pad, bias=not c.batch_norm)
                      for w in c.widths]
        self.bns = [BatchNorm(f"wconv{w}_bn", c.n_kernels) if c.batch_norm else None for w in c.widths]
        self.acts = [Activation(c.nonlinearity) for _ in c.widths]
        self.drops = [Dropout(c.conv_dropout) for _ in c.widths]
        for conv, bn in zip(self.convs, self.bns):
            conv.init(self.params, rng)
            if bn is not None:
                bn.init(self.params, rng)
        flat = c.n_kernels * len(c.widths)
        fc, dim = ff_blocks("fc", flat, block_widths(flat, c.fc_divisor, c.fc_repeats),
                            c.fc_nonlinearity, c.fc_batch_norm, c.fc_dropout)
        self.head = Stack(fc + [Dense("out", dim, 2)])
        self.head.init(self.params, rng)

    @property
    def max_len(self):
        return self.t_max

    def _out_mask(self, conv, lengths, L):
        n_valid = np.maximum(lengths - (0 if conv.pad else conv.width - 1), 1)
        return np.arange(L)[None, :] < n_valid[:, None]

    def _logits(self, batch, train=False, rng=None, update_state=True):
        if batch.T != self.t_max:
            raise ValueError(f"batch width {batch.T} differs from t_max {self.t_max}")
        P, pooled, self._backs = self.params, [], []
        kw = dict(train=train, rng=rng, state=self.state, update_state=update_state)
        for conv, bn, act, drop in zip(self.convs, self.bns, self.acts, self.drops):
            h = conv.forward(P, batch.X)
            mask = self._out_mask(conv, batch.lengths, h.shape[1])
            if bn is not None:
                h = bn.forward(P, h, mask=mask, **kw)
            h = drop.forward(P, act.forward(P, h), **kw)
            out, back = masked_pool_over_time(h, mask, self.config.pooling)
            pooled.append(out)
            self._backs.append(back)
        return self.head.forward(P, np.concatenate(pooled, axis=1), **kw)

    def _loss(self, batch, cw, rng, train, update_state):
        logits = self._logits(batch, train, rng if train else None, update_state)
        loss, d = _last_label_objective(logits, batch, cw)
        G, P = {}, self.params
        dflat = self.head.backward(P, d, G)
        C = self.config.n_kernels
        for i, (conv, bn, act, drop) in enumerate(zip(self.convs, self.bns, self.acts, self.drops)):
            dh = self._backs[i](dflat[:, i * C:(i + 1) * C])
            dh = act.backward(P, drop.backward(P, dh, G), G)
            if bn is not None:
                dh = bn.backward(P, dh, G)
            conv.backward(P, dh, G)
        return loss, G

    def _predict(self, batch):
        return softmax(self._logits(batch), axis=-1)[:, 1]
