import numpy as np
import pytest
from hypothesis import given, strategies as st

from malgray.errors import MissingGradient
from malgray.optimizer import AdamState, adam_step
from malgray.tensor.graph import Parameter

import oracles


def _param(value, grad, trainable=True):
    p = Parameter(np.array(value, dtype=np.float64), trainable)
    p.grad[...] = grad
    return p


def test_first_step_closed_form():
    p = _param([0.0], [0.1])
    adam_step([("theta", p)], AdamState(lr=0.01))
    expected = oracles.adam_first_step(0.0, 0.1)
    assert abs(p.value[0] - expected) < 1e-10
    assert abs(p.value[0] - (-0.01 * 0.1 / (0.1 + 1e-8))) < 1e-10
    assert p.value[0] == pytest.approx(-0.00999999, abs=1e-8)


def test_multi_step_matches_reference_loop():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(6, 3))
    p = _param([0.5, -1.0, 2.0], 0.0)
    st_ = AdamState(lr=0.05, beta1=0.8, beta2=0.99, epsilon=1e-6)
    theta, m, v = np.array([0.5, -1.0, 2.0]), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        p.grad[...] = g
        adam_step([("w", p)], st_)
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        theta = theta - 0.05 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-6)
    assert np.allclose(p.value, theta, rtol=0, atol=1e-12)
    assert st_.t == 6


def test_zero_gradient_no_move():
    p = _param([1.0, 2.0], 0.0)
    adam_step([("w", p)], AdamState())
    assert p.value.tolist() == [1.0, 2.0]


def test_frozen_never_moves():
    frozen = _param([3.0], [5.0], trainable=False)
    live = _param([3.0], [5.0])
    s = AdamState()
    for _ in range(3):
        adam_step([("f", frozen), ("l", live)], s)
    assert frozen.value.tolist() == [3.0]
    assert live.value[0] != 3.0
    assert "f" not in s.m


def test_missing_gradient():
    p = _param([1.0], 0.0)
    p.grad = None
    with pytest.raises(MissingGradient):
        adam_step([("w", p)], AdamState())


@given(st.lists(st.floats(-1e3, 1e3, allow_subnormal=False).filter(lambda g: abs(g) > 1e-3), min_size=1,
                max_size=20), st.floats(1e-5, 1.0))
def test_first_step_bounded_by_lr(grads, lr):
    p = _param(np.zeros(len(grads)), grads)
    adam_step([("w", p)], AdamState(lr=lr))
    assert np.all(np.abs(p.value) <= lr * (1 + 1e-6))


def test_identical_runs_bit_identical():
    def run():
        rng = np.random.default_rng(4)
        p = _param(rng.normal(size=5), 0.0)
        s = AdamState()
        for _ in range(10):
            p.grad[...] = rng.normal(size=5)
            adam_step([("w", p)], s)
        return p.value

    assert np.array_equal(run(), run())


def test_state_round_trip_and_reset():
    p = _param([1.0], [0.5])
    s = AdamState()
    adam_step([("w", p)], s)
    s2 = AdamState()
    s2.load_moments(s.moments())
    assert s2.m["w"].tolist() == s.m["w"].tolist() and s2.v["w"].tolist() == s.v["w"].tolist()
    s.reset()
    assert s.t == 0 and not s.m


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)
    with pytest.raises(ValueError):
        AdamState(lr=0.0)
