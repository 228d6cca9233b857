import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtsync.approx import (NetworkParams, OptimizerState, adam_update, backward, forward,
                           init_network, load_checkpoint, network_from_arrays, network_to_arrays,
                           polyak_blend, save_checkpoint, sigmoid, softplus)


def linear(W, b, out="identity"):
    return NetworkParams([np.array(W, float)], [np.array(b, float)], "relu", out)


def test_zero_network_gives_zero():
    net = NetworkParams([np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    y, _ = forward(net, np.ones(3))
    assert y.tolist() == [0.0, 0.0]


def test_single_linear_layer():
    y, _ = forward(linear([[2.0]], [1.0]), np.array([3.0]))
    assert y.tolist() == [7.0]


def test_softplus_output_at_zero():
    y, _ = forward(linear([[0.0]], [0.0], "softplus"), np.array([5.0]))
    assert y[0] == pytest.approx(math.log(2), abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(linear([[1.0]], [0.0]), np.ones(2))


def test_squared_loss_gradient_hand_formula():
    net = linear([[0.5], [-1.0]], [0.25])
    x, t = np.array([2.0, 3.0]), 1.0
    y, cache = forward(net, x)
    grads, gx = backward(net, cache, 2 * (y - t))
    assert np.allclose(grads[0][:, 0], 2 * (y[0] - t) * x, rtol=0, atol=1e-15)
    assert grads[1][0] == pytest.approx(2 * (y[0] - t))
    assert np.allclose(gx, 2 * (y[0] - t) * np.array([0.5, -1.0]))


def test_relu_kink_uses_zero_subgradient():
    # hidden pre-activation exactly zero
    net = NetworkParams([np.array([[1.0]]), np.array([[1.0]])], [np.array([0.0]), np.array([0.0])])
    y, cache = forward(net, np.array([0.0]))
    grads, gx = backward(net, cache, np.array([1.0]))
    assert grads[0][0, 0] == 0 and grads[1][0] == 0 and gx[0] == 0


def _fd_check(net, x, probes, rng, h=1e-5):
    y, cache = forward(net, x)
    proj = rng.normal(size=y.shape)
    grads, gx = backward(net, cache, proj)

    def f():
        return float(np.sum(forward(net, x)[0] * proj))

    arrays = net.arrays()
    worst = 0.0
    for _ in range(probes):
        k = rng.integers(len(arrays))
        a = arrays[k]
        i = tuple(rng.integers(s) for s in a.shape)
        old = a[i]
        a[i] = old + h
        fp = f()
        a[i] = old - h
        fm = f()
        a[i] = old
        fd = (fp - fm) / (2 * h)
        an = grads[k][i]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst, gx, proj


@pytest.mark.parametrize("act,out", [("relu", "identity"), ("tanh", "softplus"), ("tanh", "identity")])
def test_three_layer_fd(act, out):
    rng = np.random.default_rng(0)
    net = init_network([5, 16, 16, 3], rng, act, out)
    x = rng.normal(size=(7, 5))
    worst, _, _ = _fd_check(net, x, 64, rng)
    assert worst < 1e-4


def test_input_gradient_fd():
    rng = np.random.default_rng(1)
    net = init_network([4, 8, 1], rng, "tanh")
    x = rng.normal(size=4)
    _, cache = forward(net, x)
    _, gx = backward(net, cache, np.array([1.0]))
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1e-6
        fd = (forward(net, x + e)[0][0] - forward(net, x - e)[0][0]) / 2e-6
        assert gx[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_adam_zero_gradient_and_first_step():
    p = [np.array([1.5])]
    opt = OptimizerState.for_arrays(p, 0.01)
    adam_update(p, [np.array([0.0])], opt)
    assert p[0][0] == 1.5 and opt.step_count == 1
    q = [np.array([0.0])]
    opt2 = OptimizerState.for_arrays(q, 0.01)
    adam_update(q, [np.array([1.0])], opt2)
    assert q[0][0] == pytest.approx(-0.01, rel=1e-6)
    adam_update(q, [np.array([1.0])], opt2, ascent=True)
    assert q[0][0] == pytest.approx(0.0, abs=1e-8)


def test_adam_rejects_nan():
    p = [np.array([1.0])]
    opt = OptimizerState.for_arrays(p, 0.01)
    with pytest.raises(FloatingPointError):
        adam_update(p, [np.array([np.nan])], opt)
    assert p[0][0] == 1.0 and opt.step_count == 0


@settings(max_examples=40, deadline=None)
@given(rho=st.floats(0.0, 1.0), seed=st.integers(0, 10_000))
def test_polyak_is_convex_blend(rho, seed):
    rng = np.random.default_rng(seed)
    t = init_network([3, 4, 2], rng)
    o = init_network([3, 4, 2], rng)
    before = [a.copy() for a in t.arrays()]
    polyak_blend(t, o, rho)
    for a, b, c in zip(t.arrays(), before, o.arrays()):
        assert np.allclose(a, rho * c + (1 - rho) * b, rtol=0, atol=1e-15)


def test_polyak_shape_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        polyak_blend(init_network([3, 4, 2], rng), init_network([3, 5, 2], rng), 0.5)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    net = init_network([6, 5, 2], rng, "tanh", "softplus")
    p = tmp_path / "c.json"
    save_checkpoint(p, network_to_arrays("m", net), {"episode": 4})
    ck = load_checkpoint(p)
    back = network_from_arrays("m", ck.arrays, "tanh", "softplus")
    assert ck.meta == {"episode": 4}
    for a, b in zip(net.arrays(), back.arrays()):
        assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-700, 700))
def test_stable_activations(x):
    s = sigmoid(np.array([x]))[0]
    sp = softplus(np.array([x]))[0]
    assert 0.0 <= s <= 1.0 and np.isfinite(sp) and sp >= max(x, 0.0) - 1e-12
