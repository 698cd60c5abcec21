import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hfreadmit.numerics import (AdamState, NumericalError, adam_step, check_finite, clip_global_norm,
                                cross_entropy, dropout_mask, grad_check, l2_penalty, log_softmax,
                                logsumexp, relu, sigmoid, softmax, tanh)

finite = st.floats(-50, 50, allow_nan=False)


def test_activation_fixed_points():
    assert sigmoid(0.0) == 0.5
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    assert relu(-3.0) == 0.0
    assert tanh(0.0) == 0.0


def test_sigmoid_extremes_stay_finite():
    out = sigmoid(np.array([-1000.0, 1000.0]))
    assert out[0] == 0.0 and out[1] == 1.0


@pytest.mark.parametrize("y,p,expected", [
    ([0, 1], [0.5, 0.5], 0.693147),
    ([1, 0], [1.0, 0.0], 0.0),
    ([0, 1], [0.9, 0.1], 2.302585),
])
def test_cross_entropy_examples(y, p, expected):
    assert cross_entropy(y, p) == pytest.approx(expected, abs=1e-6)


def test_cross_entropy_shape_mismatch():
    with pytest.raises(ValueError):
        cross_entropy([0, 1], [0.2, 0.3, 0.5])


@given(arrays(np.float64, st.integers(2, 6), elements=finite), st.data())
def test_softmax_cross_entropy_is_lse_minus_true_logit(v, data):
    k = data.draw(st.integers(0, len(v) - 1))
    onehot = np.eye(len(v))[k]
    ce = -np.sum(onehot * log_softmax(v))
    assert ce == pytest.approx(logsumexp(v) - v[k], abs=1e-10)


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_softmax_is_a_distribution(v):
    p = softmax(v)
    assert np.all(p >= 0) and math.isclose(p.sum(), 1.0, abs_tol=1e-12)


def test_adam_first_step_moves_by_lr():
    st_ = AdamState(lr=0.1)
    out = adam_step(st_, {"W": np.zeros(3)}, {"W": np.ones(3)})
    assert np.allclose(out["W"], -0.1, atol=1e-7)


def test_adam_zero_gradient_is_noop():
    p = {"W": np.arange(4.0)}
    out = adam_step(AdamState(lr=0.1), p, {"W": np.zeros(4)})
    assert np.array_equal(out["W"], p["W"])


def test_adam_cloned_state_is_deterministic():
    rng = np.random.default_rng(0)
    p, g = {"W": rng.normal(size=5)}, {"W": rng.normal(size=5)}
    s = AdamState(lr=0.01)
    adam_step(s, p, g)
    a = adam_step(s.clone(), p, g)
    b = adam_step(s.clone(), p, g)
    assert np.array_equal(a["W"], b["W"])


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(NumericalError):
        adam_step(AdamState(), {"W": np.zeros(2)}, {"W": np.array([np.nan, 0.0])})


def test_l2_penalty_examples():
    pen, g = l2_penalty({"W": np.array([3.0, 4.0])}, 2.0)
    assert pen == 25.0
    assert np.array_equal(g["W"], [6.0, 8.0])
    pen0, g0 = l2_penalty({"W": np.array([3.0, 4.0])}, 0.0)
    assert pen0 == 0.0 and not g0["W"].any()


def test_l2_penalty_skips_biases_unless_asked():
    params = {"dense.W": np.ones(2), "dense.b": np.ones(2)}
    assert l2_penalty(params, 1.0)[0] == 1.0
    assert l2_penalty(params, 1.0, include_bias=True)[0] == 2.0


def test_l2_gradient_matches_finite_difference():
    rng = np.random.default_rng(3)
    params = {"a.W": rng.normal(size=(3, 2)), "a.b": rng.normal(size=2)}
    _, g = l2_penalty(params, 0.3)
    err = grad_check(lambda: l2_penalty(params, 0.3)[0], params, g, floor=1e-8)
    assert err < 1e-8


def test_grad_check_exact_on_quadratic():
    theta = {"W": np.random.default_rng(1).normal(size=10)}
    err = grad_check(lambda: 0.5 * float(theta["W"] @ theta["W"]), theta, {"W": theta["W"].copy()})
    assert err < 1e-9


def test_grad_check_flags_a_wrong_gradient():
    theta = {"W": np.ones(3)}
    assert grad_check(lambda: float(np.sum(theta["W"] ** 2)), theta, {"W": np.ones(3)}) > 0.4


def test_grad_check_steps_past_a_nearby_kink():
    # relu(w) at w = 3e-6: the h=1e-5 central difference straddles the kink and reads 0.65
    theta = {"W": np.array([3e-6])}
    loss = lambda: float(np.maximum(theta["W"], 0.0).sum())
    assert grad_check(loss, theta, {"W": np.ones(1)}, retry_above=None) == pytest.approx(0.35)
    assert grad_check(loss, theta, {"W": np.ones(1)}) < 1e-9
    assert grad_check(loss, theta, {"W": np.full(1, 0.5)}) > 0.2


def test_dropout_mask_statistics():
    assert np.array_equal(dropout_mask((5, 5), 0.0, np.random.default_rng(0)), np.ones((5, 5)))
    m = dropout_mask(10_000, 0.5, np.random.default_rng(0))
    assert abs((m == 0).mean() - 0.5) < 0.02
    x = np.random.default_rng(1).uniform(1, 2, size=50)
    rng = np.random.default_rng(2)
    mean = np.mean([x * dropout_mask(50, 0.35, rng) for _ in range(10_000)], axis=0)
    assert np.all(np.abs(mean / x - 1) < 0.05) and abs(mean.mean() / x.mean() - 1) < 0.01


def test_dropout_identity_at_eval():
    assert np.array_equal(dropout_mask(4, 0.5, None), np.ones(4))
    with pytest.raises(ValueError):
        dropout_mask(4, 1.0, np.random.default_rng(0))


@settings(max_examples=50)
@given(arrays(np.float64, 6, elements=finite), st.floats(0.1, 10))
def test_clip_global_norm_bounds_norm(g, max_norm):
    grads = {"a": g[:3].copy(), "b": g[3:].copy()}
    before = clip_global_norm(grads, max_norm)
    after = math.sqrt(sum(float(np.sum(v * v)) for v in grads.values()))
    assert after <= max_norm * (1 + 1e-12) or after == pytest.approx(before)


def test_check_finite():
    check_finite("ok", np.zeros(2))
    with pytest.raises(NumericalError, match="bad"):
        check_finite("bad", np.array([np.inf]))
