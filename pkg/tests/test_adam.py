import numpy as np
import pytest

from iqarobust.gradcore import AdamState, adam_step


def scalar_adam_oracle(p0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float transcription of the Adam recurrence."""
    p, m, v = p0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return p


def test_zero_gradient_leaves_params_unchanged():
    p = np.array([0.3, -1.2, 4.0])
    state = AdamState(lr=0.1)
    np.testing.assert_array_equal(adam_step(state, p, np.zeros(3)), p)
    assert state.step == 1


def test_first_step_is_unit_signed_step():
    # at t=1 the bias-corrected ratio is g / (|g| + eps_hat), i.e. sign(g) for eps_hat=0
    p = np.zeros((2, 3))
    g = np.full((2, 3), -0.37)
    out = adam_step(AdamState(lr=0.01, eps_hat=0.0), p, g)
    np.testing.assert_allclose(out, np.full((2, 3), 0.01), rtol=0, atol=1e-17)
    out = adam_step(AdamState(lr=0.01), p, g)
    np.testing.assert_allclose(out, np.full((2, 3), 0.01), rtol=1e-7)


def test_quadratic_converges_like_scalar_recurrence():
    state = AdamState(lr=0.1)
    p = np.array([0.0])
    for _ in range(200):
        p = adam_step(state, p, 2 * (p - 3.0))
    oracle = scalar_adam_oracle(0.0, lambda q: 2 * (q - 3.0), 200, 0.1)
    assert abs(p[0] - 3.0) < 0.1
    assert p[0] == pytest.approx(oracle, abs=1e-12)
    assert state.step == 200


def test_zero_betas_reduce_to_normalised_step():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = rng.standard_normal(4)
        p = rng.standard_normal(4)
        out = adam_step(AdamState(lr=0.2, beta1=0.0, beta2=0.0, eps_hat=1e-300), p, g)
        np.testing.assert_allclose(out, p - 0.2 * g / np.abs(g), rtol=1e-14)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), np.zeros(3), np.zeros(4))


def test_state_shape_is_pinned_after_first_step():
    state = AdamState()
    adam_step(state, np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(2), np.ones(2))


def test_learning_rate_must_be_positive():
    with pytest.raises(ValueError):
        AdamState(lr=0.0)
