"""NumPy reference implementation of the recurrence and optimizer kernels.

Used as the fallback backend and for float64 work (gradient checks); the
compiled backend in _core.pyx mirrors these signatures for float32.

Gate layout along the last axis is i | f | g | o blocks of size H; the
sequence axis is time-major so every per-step slab is contiguous.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 0.5 * np.tanh(0.5 * x) + 0.5


def lstm_seq_forward(gates, w_hh, h0, c0):
    """Run the LSTM recurrence over a sequence of input pre-activations.

    gates: (W, B, 4H) input-to-hidden pre-activations (x @ w_ih + b); the
    array is overwritten in place with the post-activation gate values.
    Returns (h_seq, c_seq), each (W, B, H).
    """
    n_w, n_b, four_h = gates.shape
    n_h = four_h // 4
    h_seq = np.empty((n_w, n_b, n_h), dtype=gates.dtype)
    c_seq = np.empty((n_w, n_b, n_h), dtype=gates.dtype)
    h = h0
    c = c0
    for t in range(n_w):
        g = gates[t]
        g += h @ w_hh
        gi = g[:, :n_h]
        gf = g[:, n_h : 2 * n_h]
        gg = g[:, 2 * n_h : 3 * n_h]
        go = g[:, 3 * n_h :]
        gi[:] = _sigmoid(gi)
        gf[:] = _sigmoid(gf)
        gg[:] = np.tanh(gg)
        go[:] = _sigmoid(go)
        c = gf * c + gi * gg
        h = go * np.tanh(c)
        c_seq[t] = c
        h_seq[t] = h
    return h_seq, c_seq


def lstm_seq_backward(w_hh, gates, h_seq, c_seq, h0, c0, d_h_seq):
    """Reverse-mode pass matching lstm_seq_forward.

    gates must hold the post-activation values cached by the forward pass.
    Returns (d_gates, d_w_hh, d_h0, d_c0) where d_gates are gradients with
    respect to the input pre-activations, shaped like gates.
    """
    n_w, n_b, four_h = gates.shape
    n_h = four_h // 4
    d_gates = np.empty_like(gates)
    d_w_hh = np.zeros_like(w_hh)
    dh = np.zeros((n_b, n_h), dtype=gates.dtype)
    dc = np.zeros((n_b, n_h), dtype=gates.dtype)
    for t in range(n_w - 1, -1, -1):
        dh = dh + d_h_seq[t]
        g = gates[t]
        gi = g[:, :n_h]
        gf = g[:, n_h : 2 * n_h]
        gg = g[:, 2 * n_h : 3 * n_h]
        go = g[:, 3 * n_h :]
        c = c_seq[t]
        c_prev = c_seq[t - 1] if t > 0 else c0
        h_prev = h_seq[t - 1] if t > 0 else h0
        tc = np.tanh(c)
        dg = d_gates[t]
        dg[:, 3 * n_h :] = dh * tc * go * (1.0 - go)
        dc = dc + dh * go * (1.0 - tc * tc)
        dg[:, :n_h] = dc * gg * gi * (1.0 - gi)
        dg[:, n_h : 2 * n_h] = dc * c_prev * gf * (1.0 - gf)
        dg[:, 2 * n_h : 3 * n_h] = dc * gi * (1.0 - gg * gg)
        dc = dc * gf
        d_w_hh += h_prev.T @ dg
        dh = dg @ w_hh.T
    return d_gates, d_w_hh, dh, dc


def adam_step(value, grad, m, v, t, lr, beta1, beta2, eps):
    """One in-place Adam update on a flat parameter array."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)
