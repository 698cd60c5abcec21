"""Dense numeric core shared by every model.

Everything here works on float64 numpy arrays. Gradients elsewhere in the
package are derived by hand; :func:`grad_check` is the harness that keeps
them honest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

LOG_CLAMP = 1e-12


class NumericalError(FloatingPointError):
    """Raised in checked mode when a value stops being finite."""


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in {name}")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def tanh(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0.0)


def logsumexp(a: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v - logsumexp(v, axis=axis, keepdims=True)


def cross_entropy(y_onehot, probs) -> float:
    """``-sum_c y_c log p_c`` with the log argument clamped at 1e-12."""
    y = np.asarray(y_onehot, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch: labels {y.shape} vs probabilities {p.shape}")
    return float(-np.sum(y * np.log(np.maximum(p, LOG_CLAMP))))


# -- activations with derivatives, used by the layer kit ---------------------

def activation(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return {"tanh": np.tanh, "relu": relu, "sigmoid": sigmoid, "identity": lambda x: x}[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}") from None


def activation_grad(name: str, out: np.ndarray) -> np.ndarray:
    """Derivative expressed through the activation *output*."""
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (out > 0).astype(np.float64)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "identity":
        return np.ones_like(out)
    raise ValueError(f"unknown nonlinearity {name!r}")


# -- optimisation -------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def clone(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(state: AdamState, params: Mapping[str, np.ndarray],
              grads: Mapping[str, np.ndarray], checked: bool = True) -> dict:
    """Bias-corrected Adam update. Returns new parameter arrays; ``state`` is advanced in place."""
    if checked:
        for k, g in grads.items():
            check_finite(f"gradient {k}", g)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


def is_penalized(name: str) -> bool:
    """Weights carry a ``W`` leaf name; biases and batch-norm affine terms do not."""
    return name.rsplit(".", 1)[-1].startswith("W")


def l2_penalty(params: Mapping[str, np.ndarray], lam: float, include_bias: bool = False):
    """``(lam/2) * ||theta||^2`` and its gradient, biases excluded by default."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    total = 0.0
    grads = {}
    for k, p in params.items():
        if include_bias or is_penalized(k):
            total += float(np.sum(p * p))
            grads[k] = lam * p
        else:
            grads[k] = np.zeros_like(p)
    return 0.5 * lam * total, grads


def clip_global_norm(grads: dict, max_norm: float | None) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and norm > max_norm > 0:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def dropout_mask(shape, p: float, rng: np.random.Generator | None) -> np.ndarray:
    """Inverted-dropout mask. ``rng=None`` means evaluation: identity mask."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    if rng is None or p == 0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


# -- finite differences -------------------------------------------------------

def grad_check(loss_fn: Callable[[], float], params: Mapping[str, np.ndarray],
               grads: Mapping[str, np.ndarray], h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-6, retry_above: float | None = 1e-6) -> float:
    """Largest coordinatewise relative error between ``grads`` and central differences.

    ``loss_fn`` is re-evaluated after perturbing ``params`` in place, so it
    must read the same arrays. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off on
    structurally zero gradients (about 1e-11 at h=1e-5) from reading as error.
    Coordinates whose error exceeds ``retry_above`` are re-checked with step
    ``h/10`` and keep the smaller error, so a ReLU or max-pool kink lying
    within ``h`` of the parameter is not mistaken for a wrong gradient.
    """
    def central(flat, i, step):
        old = flat[i]
        flat[i] = old + step
        fp = loss_fn()
        flat[i] = old - step
        fm = loss_fn()
        flat[i] = old
        return (fp - fm) / (2 * step)

    worst = 0.0
    for k, p in params.items():
        g = grads[k]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in idx:
            ana = g.reshape(-1)[i]
            rel = lambda num: abs(ana - num) / max(abs(ana), abs(num), floor)
            err = rel(central(flat, i, h))
            if retry_above is not None and err > retry_above:
                err = min(err, rel(central(flat, i, h / 10)))
            worst = max(worst, err)
    return worst
