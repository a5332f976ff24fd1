"""Gradient and algebra checks for every layer type, in isolation and composed."""

import numpy as np
import pytest

from awats.errors import ValidationError
from awats.neural import _kernels_np
from awats.neural.layers import (
    BatchNorm,
    Conv1d,
    Dense,
    LSTMStack,
    ReLU,
    cross_entropy,
    softmax,
)
from awats.seeding import derive_rng


def fd_check(params, loss_fn, analytic, h=1e-5, tol=1e-6):
    """Central finite differences on float64 parameters against analytic grads."""
    for p in params:
        flat = p.value.reshape(-1)
        gflat = analytic[p.name].reshape(-1)
        idxs = derive_rng(0, "fd", p.name).choice(
            flat.size, size=min(8, flat.size), replace=False
        )
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(fd - gflat[i]) <= tol * max(abs(fd), abs(gflat[i]), 1e-3), (
                f"{p.name}[{i}]: fd={fd} analytic={gflat[i]}"
            )


def grads_of(layers):
    out = {}
    for layer in layers:
        for p in layer.parameters():
            out[p.name] = p.grad
    return out


def test_dense_gradients():
    rng = derive_rng(1, "dense")
    layer = Dense("d", 7, 5, rng, dtype=np.float64)
    x = rng.standard_normal((6, 7))
    target = rng.standard_normal((6, 5))

    def loss_fn():
        return float(((layer.forward(x) - target) ** 2).sum())

    y = layer.forward(x)
    dy = 2 * (y - target)
    for p in layer.parameters():
        p.zero_grad()
    dx = layer.backward(dy)
    fd_check(layer.parameters(), loss_fn, grads_of([layer]))
    # input gradient via FD too
    h = 1e-6
    for i in [(0, 0), (3, 4)]:
        orig = x[i]
        x[i] = orig + h
        lp = loss_fn()
        x[i] = orig - h
        lm = loss_fn()
        x[i] = orig
        assert abs((lp - lm) / (2 * h) - dx[i]) < 1e-5


def test_batchnorm_train_statistics_and_gradients():
    rng = derive_rng(2, "bn")
    layer = BatchNorm("bn", 4, dtype=np.float64)
    x = rng.standard_normal((32, 4)) * 3 + 1.5
    y = layer.forward(x.copy(), train=True)
    np.testing.assert_allclose(y.mean(axis=0), layer.beta.value, atol=1e-10)

    # train-mode batch statistics match the empirical batch moments
    fresh = BatchNorm("bn2", 4, dtype=np.float64, momentum=1.0)
    fresh.forward(x.copy(), train=True)
    np.testing.assert_allclose(fresh.running_mean, x.mean(axis=0), rtol=1e-6)
    np.testing.assert_allclose(fresh.running_var, x.var(axis=0), rtol=1e-6)

    target = rng.standard_normal((32, 4))
    layer2 = BatchNorm("bn3", 4, dtype=np.float64)
    layer2.gamma.value[:] = rng.uniform(0.5, 1.5, 4)
    layer2.beta.value[:] = rng.standard_normal(4)

    def loss_fn():
        return float(((layer2.forward(x, train=True) - target) ** 2).sum())

    y2 = layer2.forward(x, train=True)
    for p in layer2.parameters():
        p.zero_grad()
    layer2.backward(2 * (y2 - target))
    fd_check(layer2.parameters(), loss_fn, grads_of([layer2]))


def test_batchnorm_eval_is_affine_and_single_sample_train_rejected():
    rng = derive_rng(3, "bn-eval")
    layer = BatchNorm("bn", 3, dtype=np.float64)
    layer.running_mean[:] = rng.standard_normal(3)
    layer.running_var[:] = rng.uniform(0.5, 2.0, 3)
    x1 = rng.standard_normal((5, 3))
    x2 = rng.standard_normal((5, 3))
    y1 = layer.forward(x1, train=False)
    y2 = layer.forward(x2, train=False)
    # affine: f(x1) - f(x2) is linear in (x1 - x2)
    scale = layer.gamma.value / np.sqrt(layer.running_var + layer.epsilon)
    np.testing.assert_allclose(y1 - y2, (x1 - x2) * scale, rtol=1e-10)
    with pytest.raises(ValidationError):
        layer.forward(x1[:1], train=True)


def test_conv1d_gradients_and_shape():
    rng = derive_rng(4, "conv")
    layer = Conv1d("c", 3, 4, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 3, 9))
    target = rng.standard_normal((2, 4, 9))

    def loss_fn():
        return float(((layer.forward(x) - target) ** 2).sum())

    y = layer.forward(x)
    assert y.shape == (2, 4, 9)
    for p in layer.parameters():
        p.zero_grad()
    dx = layer.backward(2 * (y - target))
    assert dx.shape == x.shape
    fd_check(layer.parameters(), loss_fn, grads_of([layer]))
    h = 1e-6
    for i in [(0, 0, 0), (1, 2, 8), (0, 1, 4)]:
        orig = x[i]
        x[i] = orig + h
        lp = loss_fn()
        x[i] = orig - h
        lm = loss_fn()
        x[i] = orig
        assert abs((lp - lm) / (2 * h) - dx[i]) < 1e-5


def test_conv1d_hand_computed_same_padding():
    rng = derive_rng(5, "conv-hand")
    layer = Conv1d("c", 1, 1, 3, rng, dtype=np.float64)
    layer.w.value[0, 0] = [1.0, 2.0, 3.0]
    layer.b.value[0] = 0.5
    x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
    y = layer.forward(x)
    # zero padded: y[t] = 1*x[t-1] + 2*x[t] + 3*x[t+1] + b
    np.testing.assert_allclose(y[0, 0], [2 + 6 + 0.5, 1 + 4 + 9 + 0.5,
                                         2 + 6 + 12 + 0.5, 3 + 8 + 0.5])


def test_lstm_stack_gradients():
    rng = derive_rng(6, "lstm")
    stack = LSTMStack("l", 3, 4, 2, rng, dtype=np.float64)
    x = rng.standard_normal((5, 2, 3))  # (W, B, I)
    target = rng.standard_normal((2, 4))

    def loss_fn():
        return float(((stack.forward(x)[-1] - target) ** 2).sum())

    h_seq = stack.forward(x)
    d_top = np.zeros_like(h_seq)
    d_top[-1] = 2 * (h_seq[-1] - target)
    for p in stack.parameters():
        p.zero_grad()
    dx = stack.backward(d_top)
    assert dx.shape == x.shape
    fd_check(stack.parameters(), loss_fn, grads_of([stack]), tol=1e-5)
    h = 1e-6
    for i in [(0, 0, 0), (4, 1, 2), (2, 0, 1)]:
        orig = x[i]
        x[i] = orig + h
        lp = loss_fn()
        x[i] = orig - h
        lm = loss_fn()
        x[i] = orig
        assert abs((lp - lm) / (2 * h) - dx[i]) < 1e-5


def test_lstm_single_step_matches_hand_recurrence():
    """One step, one unit: spell out the gate equations by hand."""
    rng = derive_rng(7, "lstm-hand")
    w_ih = rng.standard_normal((1, 4)).astype(np.float64)
    w_hh = rng.standard_normal((1, 4)).astype(np.float64)
    b = rng.standard_normal(4).astype(np.float64)
    x = rng.standard_normal((2, 1, 1))  # W=2 steps, B=1, I=1

    gates = (x.reshape(2, 1) @ w_ih + b).reshape(2, 1, 4).copy()
    h_seq, c_seq = _kernels_np.lstm_seq_forward(
        gates, w_hh, np.zeros((1, 1)), np.zeros((1, 1))
    )

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    h = c = 0.0
    for t in range(2):
        pre = x[t, 0, 0] * w_ih[0] + h * w_hh[0] + b
        i, f, g, o = sig(pre[0]), sig(pre[1]), np.tanh(pre[2]), sig(pre[3])
        c = f * c + i * g
        h = o * np.tanh(c)
        assert h_seq[t, 0, 0] == pytest.approx(h, rel=1e-12)
        assert c_seq[t, 0, 0] == pytest.approx(c, rel=1e-12)


def test_lstm_forget_gate_preserves_cell_state():
    """Zero weights, forget bias +10: the cell state must persist across steps."""
    n_h, n_b, n_w = 3, 2, 6
    w_hh = np.zeros((n_h, 4 * n_h))
    gates = np.zeros((n_w, n_b, 4 * n_h))
    gates[:, :, n_h : 2 * n_h] = 10.0  # forget-gate pre-activation
    c0 = np.array([[0.3, -0.7, 1.2], [0.9, 0.1, -0.4]])
    h0 = np.zeros((n_b, n_h))
    _, c_seq = _kernels_np.lstm_seq_forward(gates.copy(), w_hh, h0, c0)
    np.testing.assert_allclose(c_seq[-1], c0, atol=1e-4)


def test_softmax_and_cross_entropy():
    rng = derive_rng(8, "ce")
    logits = rng.standard_normal((10, 6))
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    labels = rng.integers(0, 6, 10)
    loss, dlogits = cross_entropy(logits.copy(), labels)
    # linearity: doubling the upstream loss doubles every gradient
    loss2, dlogits2 = cross_entropy(logits.copy(), labels)
    np.testing.assert_allclose(2 * dlogits, dlogits2 + dlogits, rtol=1e-12)

    h = 1e-6
    for i in [(0, 0), (4, 5), (9, 2)]:
        lp = logits.copy()
        lp[i] += h
        lm = logits.copy()
        lm[i] -= h
        fd = (cross_entropy(lp, labels)[0] - cross_entropy(lm, labels)[0]) / (2 * h)
        assert abs(fd - dlogits[i]) < 1e-6


def test_uniform_logits_give_zero_bias_gradient():
    # symmetric cross-entropy stationarity: balanced labels + uniform logits
    logits = np.zeros((8, 4))
    labels = np.repeat(np.arange(4), 2)
    _, dlogits = cross_entropy(logits, labels)
    np.testing.assert_allclose(dlogits.sum(axis=0), 0.0, atol=1e-12)
