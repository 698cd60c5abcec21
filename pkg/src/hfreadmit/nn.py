"""Small layer kit with hand-written backward passes.

Layers keep their parameters in a shared ``params`` dict under
``"<layer>.<leaf>"`` names and accumulate gradients into a matching dict.
Forward caches live on the layer object, so one forward must be followed
by at most one backward before the next forward.
"""

from __future__ import annotations

import numpy as np

from .numerics import activation, activation_grad, sigmoid, glorot_uniform, orthogonal, dropout_mask


def _acc(G, key, val):
    if key in G:
        G[key] += val
    else:
        G[key] = val.copy() if isinstance(val, np.ndarray) else val


class Layer:
    name: str = ""

    def init(self, params: dict, rng: np.random.Generator) -> None:
        pass


class Dense(Layer):
    """Affine map; ``bias=False`` when a batch norm follows (its shift replaces the bias)."""

    def __init__(self, name, n_in, n_out, bias=True):
        self.name, self.n_in, self.n_out, self.bias = name, n_in, n_out, bias

    def init(self, params, rng):
        params[f"{self.name}.W"] = glorot_uniform(rng, self.n_in, self.n_out)
        if self.bias:
            params[f"{self.name}.b"] = np.zeros(self.n_out)

    def forward(self, P, x, **_):
        self.x = x
        y = x @ P[f"{self.name}.W"]
        return y + P[f"{self.name}.b"] if self.bias else y

    def backward(self, P, dy, G):
        x2 = self.x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        _acc(G, f"{self.name}.W", x2.T @ dy2)
        if self.bias:
            _acc(G, f"{self.name}.b", dy2.sum(0))
        return dy @ P[f"{self.name}.W"].T


class Activation(Layer):
    def __init__(self, kind):
        self.kind = kind
        self.f = activation(kind)

    def forward(self, P, x, **_):
        self.out = self.f(x)
        return self.out

    def backward(self, P, dy, G):
        return dy * activation_grad(self.kind, self.out)


class Dropout(Layer):
    def __init__(self, p):
        self.p = p

    def forward(self, P, x, rng=None, **_):
        self.mask = dropout_mask(x.shape, self.p, rng) if self.p > 0 and rng is not None else None
        return x if self.mask is None else x * self.mask

    def backward(self, P, dy, G):
        return dy if self.mask is None else dy * self.mask


class BatchNorm(Layer):
    """Normalises the last axis over all leading positions.

    In training the batch statistics are used and running estimates are
    updated in ``state``; at evaluation the running estimates are used.
    ``mask`` (leading shape, boolean) restricts statistics to valid rows.
    """

    def __init__(self, name, dim, momentum=0.9, eps=1e-5):
        self.name, self.dim, self.momentum, self.eps = name, dim, momentum, eps

    def init(self, params, rng):
        params[f"{self.name}.gamma"] = np.ones(self.dim)
        params[f"{self.name}.beta"] = np.zeros(self.dim)

    def forward(self, P, x, train=True, state=None, mask=None, update_state=True, **_):
        gamma, beta = P[f"{self.name}.gamma"], P[f"{self.name}.beta"]
        x2 = x.reshape(-1, self.dim)
        w = np.ones(len(x2)) if mask is None else mask.reshape(-1).astype(np.float64)
        self.w = w
        if train:
            n = max(w.sum(), 1.0)
            mu = (w @ x2) / n
            xc = x2 - mu
            var = (w @ (xc * xc)) / n
            if state is not None and update_state:
                m = self.momentum
                rm = state.setdefault(f"{self.name}.mean", np.zeros(self.dim))
                rv = state.setdefault(f"{self.name}.var", np.ones(self.dim))
                rm *= m
                rm += (1 - m) * mu
                rv *= m
                rv += (1 - m) * var
            self.n = n
        else:
            state = state or {}
            mu = state.get(f"{self.name}.mean", np.zeros(self.dim))
            var = state.get(f"{self.name}.var", np.ones(self.dim))
            xc = x2 - mu
        self.train = train
        self.inv = 1.0 / np.sqrt(var + self.eps)
        self.xhat = xc * self.inv
        out = self.xhat * gamma + beta
        return out.reshape(x.shape)

    def backward(self, P, dy, G):
        gamma = P[f"{self.name}.gamma"]
        dy2 = dy.reshape(-1, self.dim) * self.w[:, None]
        _acc(G, f"{self.name}.gamma", (dy2 * self.xhat).sum(0))
        _acc(G, f"{self.name}.beta", dy2.sum(0))
        dxhat = dy2 * gamma
        if not self.train:
            return (dxhat * self.inv).reshape(dy.shape)
        n, w = self.n, self.w[:, None]
        dx = (self.inv / n) * (n * dxhat - (dxhat.sum(0)) - self.xhat * (dxhat * self.xhat).sum(0))
        return (dx * w).reshape(dy.shape)


# -- recurrent cells ----------------------------------------------------------

N_GATES = {"vanilla": 1, "lstm": 4, "gru": 3}


def init_cell_params(params, name, cell, n_in, hidden, rng):
    g = N_GATES[cell]
    params[f"{name}.Wx"] = np.concatenate(
        [glorot_uniform(rng, n_in, hidden) for _ in range(g)], axis=1)
    params[f"{name}.Wh"] = np.concatenate([orthogonal(rng, hidden) for _ in range(g)], axis=1)
    params[f"{name}.b"] = np.zeros(g * hidden)


def cell_step(cell, P, name, x, state, phi="tanh"):
    """One recurrence step. ``state`` is ``(h, c)``; ``c`` is ``None`` unless LSTM.

    Returns the new state and a cache tuple for :func:`cell_step_backward`.
    """
    Wx, Wh, b = P[f"{name}.Wx"], P[f"{name}.Wh"], P[f"{name}.b"]
    h_prev, c_prev = state
    f = activation(phi)
    H = h_prev.shape[-1]
    if cell == "vanilla":
        h = f(x @ Wx + h_prev @ Wh + b)
        return (h, None), (x, h_prev, h)
    if cell == "lstm":
        a = x @ Wx + h_prev @ Wh + b
        i = sigmoid(a[..., :H])
        fg = sigmoid(a[..., H:2 * H])
        o = sigmoid(a[..., 2 * H:3 * H])
        g = f(a[..., 3 * H:])
        c = fg * c_prev + i * g
        k = f(c)
        h = o * k
        return (h, c), (x, h_prev, c_prev, i, fg, o, g, c, k)
    if cell == "gru":
        ax = x @ Wx + b
        ah = h_prev @ Wh
        z = sigmoid(ax[..., :H] + ah[..., :H])
        r = sigmoid(ax[..., H:2 * H] + ah[..., H:2 * H])
        n = f(ax[..., 2 * H:] + r * ah[..., 2 * H:])
        h = (1 - z) * n + z * h_prev
        return (h, None), (x, h_prev, z, r, n, ah[..., 2 * H:])
    raise ValueError(f"unknown cell type {cell!r}")


def cell_step_backward(cell, P, name, cache, dh, dc, phi="tanh"):
    """Backward of :func:`cell_step`. Returns ``(dx, dh_prev, dc_prev, da_x, da_h, x, h_prev)``.

    ``da_x``/``da_h`` are the pre-activation gradients on the input and
    recurrent paths (identical except for GRU), used by the caller to form
    weight gradients in one matmul per sequence.
    """
    Wx, Wh = P[f"{name}.Wx"], P[f"{name}.Wh"]
    if cell == "vanilla":
        x, h_prev, h = cache
        da = dh * activation_grad(phi, h)
        return da @ Wx.T, da @ Wh.T, None, da, da, x, h_prev
    if cell == "lstm":
        x, h_prev, c_prev, i, fg, o, g, c, k = cache
        do = dh * k
        dcc = dc + dh * o * activation_grad(phi, k)
        di = dcc * g
        dg = dcc * i
        df = dcc * c_prev
        dc_prev = dcc * fg
        da = np.concatenate([di * i * (1 - i), df * fg * (1 - fg), do * o * (1 - o),
                             dg * activation_grad(phi, g)], axis=-1)
        return da @ Wx.T, da @ Wh.T, dc_prev, da, da, x, h_prev
    if cell == "gru":
        x, h_prev, z, r, n, ahn = cache
        dz = dh * (h_prev - n)
        dn = dh * (1 - z)
        dh_prev = dh * z
        dan = dn * activation_grad(phi, n)
        dr = dan * ahn
        daz = dz * z * (1 - z)
        dar = dr * r * (1 - r)
        dax = np.concatenate([daz, dar, dan], axis=-1)
        dah = np.concatenate([daz, dar, dan * r], axis=-1)
        return dax @ Wx.T, dh_prev + dah @ Wh.T, None, dax, dah, x, h_prev
    raise ValueError(f"unknown cell type {cell!r}")


class Recurrent(Layer):
    """Unrolled recurrent layer over ``(B, T, n_in)`` inputs, zero initial state."""

    def __init__(self, name, cell, n_in, hidden, phi="tanh"):
        if cell not in N_GATES:
            raise ValueError(f"unknown cell type {cell!r}")
        self.name, self.cell, self.n_in, self.hidden, self.phi = name, cell, n_in, hidden, phi

    def init(self, params, rng):
        init_cell_params(params, self.name, self.cell, self.n_in, self.hidden, rng)

    def forward(self, P, x, **_):
        B, T, _ = x.shape
        h = np.zeros((B, self.hidden))
        c = np.zeros((B, self.hidden)) if self.cell == "lstm" else None
        out = np.empty((B, T, self.hidden))
        self.caches = []
        for t in range(T):
            (h, c), cache = cell_step(self.cell, P, self.name, x[:, t], (h, c), self.phi)
            self.caches.append(cache)
            out[:, t] = h
        return out

    def backward(self, P, dy, G):
        B, T, H = dy.shape
        dx = np.empty((B, T, self.n_in))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H)) if self.cell == "lstm" else None
        das_x, das_h, xs, hs = [], [], [], []
        for t in reversed(range(T)):
            dxt, dh_next, dc_next, dax, dah, xt, hp = cell_step_backward(
                self.cell, P, self.name, self.caches[t], dy[:, t] + dh_next, dc_next, self.phi)
            dx[:, t] = dxt
            das_x.append(dax)
            das_h.append(dah)
            xs.append(xt)
            hs.append(hp)
        DAx, DAh = np.concatenate(das_x), np.concatenate(das_h)
        _acc(G, f"{self.name}.Wx", np.concatenate(xs).T @ DAx)
        _acc(G, f"{self.name}.Wh", np.concatenate(hs).T @ DAh)
        _acc(G, f"{self.name}.b", DAx.sum(0))
        return dx


# -- convolutions ---------------------------------------------------------------

def _im2col(x, k):
    """``(B, C, H, W)`` zero-padded 'same' patches -> ``(B, H, W, C*k*k)``."""
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, k - 1 - p), (p, k - 1 - p)))
    B, C, H, W = x.shape
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(B, H, W, C, k, k), strides=(s[0], s[2], s[3], s[1], s[2], s[3]), writeable=False)
    return win.reshape(B, H, W, C * k * k)


def _col2im(dcols, shape, k):
    B, C, H, W = shape
    p = k // 2
    dxp = np.zeros((B, C, H + k - 1, W + k - 1))
    d = dcols.reshape(B, H, W, C, k, k)
    for u in range(k):
        for v in range(k):
            dxp[:, :, u:u + H, v:v + W] += d[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + H, p:p + W]


class Conv2D(Layer):
    """Square ``k x k`` convolution with 'same' zero padding, ``(B, C, H, W)`` layout."""

    def __init__(self, name, c_in, c_out, k, bias=True):
        self.name, self.c_in, self.c_out, self.k, self.bias = name, c_in, c_out, k, bias

    def init(self, params, rng):
        fan_in, fan_out = self.c_in * self.k * self.k, self.c_out * self.k * self.k
        params[f"{self.name}.W"] = glorot_uniform(rng, fan_in, fan_out, (fan_in, self.c_out))
        if self.bias:
            params[f"{self.name}.b"] = np.zeros(self.c_out)

    def forward(self, P, x, **_):
        self.shape = x.shape
        self.cols = _im2col(x, self.k)
        y = self.cols @ P[f"{self.name}.W"]
        if self.bias:
            y = y + P[f"{self.name}.b"]
        return y.transpose(0, 3, 1, 2)

    def backward(self, P, dy, G):
        dy2 = dy.transpose(0, 2, 3, 1)
        cols = self.cols.reshape(-1, self.cols.shape[-1])
        _acc(G, f"{self.name}.W", cols.T @ dy2.reshape(-1, self.c_out))
        if self.bias:
            _acc(G, f"{self.name}.b", dy2.reshape(-1, self.c_out).sum(0))
        dcols = dy2 @ P[f"{self.name}.W"].T
        return _col2im(dcols, self.shape, self.k)


class Pool2D(Layer):
    """2x2 stride-2 pooling; an axis already of size 1 is left alone."""

    def __init__(self, kind="max"):
        if kind not in ("max", "avg"):
            raise ValueError(f"unknown pooling {kind!r}")
        self.kind = kind

    @staticmethod
    def out_dims(H, W):
        return (H // 2 if H > 1 else 1), (W // 2 if W > 1 else 1)

    def forward(self, P, x, **_):
        B, C, H, W = x.shape
        ph, pw = (2 if H > 1 else 1), (2 if W > 1 else 1)
        Ho, Wo = H // ph, W // pw
        self.shape, self.ph, self.pw = x.shape, ph, pw
        xr = x[:, :, :Ho * ph, :Wo * pw].reshape(B, C, Ho, ph, Wo, pw)
        if self.kind == "avg":
            return xr.mean(axis=(3, 5))
        xr2 = xr.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, ph * pw)
        self.arg = xr2.argmax(-1)
        return np.take_along_axis(xr2, self.arg[..., None], -1)[..., 0]

    def backward(self, P, dy, G):
        B, C, H, W = self.shape
        ph, pw = self.ph, self.pw
        Ho, Wo = dy.shape[2], dy.shape[3]
        dx = np.zeros(self.shape)
        if self.kind == "avg":
            blk = np.repeat(np.repeat(dy, ph, axis=2), pw, axis=3) / (ph * pw)
        else:
            d2 = np.zeros((B, C, Ho, Wo, ph * pw))
            np.put_along_axis(d2, self.arg[..., None], dy[..., None], -1)
            blk = d2.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(
                B, C, Ho * ph, Wo * pw)
        dx[:, :, :Ho * ph, :Wo * pw] = blk
        return dx


class WideConv(Layer):
    """Kernels spanning ``width`` events and the full feature dimension.

    Input ``(B, T, d)``; output ``(B, L, C)`` with ``L = T`` when padded,
    else ``T - width + 1``.
    """

    def __init__(self, name, width, d, n_kernels, pad=True, bias=True):
        self.name, self.width, self.d, self.c, self.pad, self.bias = name, width, d, n_kernels, pad, bias

    def init(self, params, rng):
        fan_in = self.width * self.d
        params[f"{self.name}.W"] = glorot_uniform(rng, fan_in, self.c)
        if self.bias:
            params[f"{self.name}.b"] = np.zeros(self.c)

    def out_len(self, T):
        return T if self.pad else T - self.width + 1

    def forward(self, P, x, **_):
        B, T, d = x.shape
        if self.pad:
            x = np.pad(x, ((0, 0), (0, self.width - 1), (0, 0)))
        L = self.out_len(T)
        if L < 1:
            raise ValueError(f"sequence length {T} shorter than kernel width {self.width}")
        s = x.strides
        win = np.lib.stride_tricks.as_strided(x, shape=(B, L, self.width, d),
                                              strides=(s[0], s[1], s[1], s[2]), writeable=False)
        self.cols = win.reshape(B, L, self.width * d)
        self.T = T
        y = self.cols @ P[f"{self.name}.W"]
        return y + P[f"{self.name}.b"] if self.bias else y

    def backward(self, P, dy, G):
        B, L, C = dy.shape
        _acc(G, f"{self.name}.W", self.cols.reshape(-1, self.cols.shape[-1]).T @ dy.reshape(-1, C))
        if self.bias:
            _acc(G, f"{self.name}.b", dy.reshape(-1, C).sum(0))
        dcols = (dy @ P[f"{self.name}.W"].T).reshape(B, L, self.width, self.d)
        Tp = self.T + (self.width - 1 if self.pad else 0)
        dx = np.zeros((B, Tp, self.d))
        for u in range(self.width):
            dx[:, u:u + L] += dcols[:, :, u]
        return dx[:, :self.T]


def masked_pool_over_time(x, mask, kind="max"):
    """Reduce ``(B, L, C)`` over valid positions of ``mask`` ``(B, L)``.

    Returns pooled ``(B, C)`` and a backward closure.
    """
    if kind == "max":
        xm = np.where(mask[:, :, None], x, -np.inf)
        arg = xm.argmax(1)
        out = np.take_along_axis(x, arg[:, None, :], 1)[:, 0]

        def back(dout):
            dx = np.zeros_like(x)
            np.put_along_axis(dx, arg[:, None, :], dout[:, None, :], 1)
            return dx
        return out, back
    if kind == "avg":
        w = mask.astype(np.float64)
        n = np.maximum(w.sum(1, keepdims=True), 1.0)
        out = (x * w[:, :, None]).sum(1) / n

        def back(dout):
            return (w / n)[:, :, None] * dout[:, None, :]
        return out, back
    raise ValueError(f"unknown pooling {kind!r}")
