"""Differentiable building blocks with explicit forward/backward passes.

Every layer caches what its backward pass needs and accumulates parameter
gradients into Parameter.grad. Shapes follow the conventions: dense layers
act on (N, features), 1-D convolutions on (batch, channels, time), the LSTM
stack on time-major (time, batch, features) sequences.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ValidationError
from . import backend


class Parameter:
    """A named trainable array plus its gradient accumulator."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    def __init__(self, name, n_in, n_out, rng, dtype=np.float32):
        self.w = Parameter(f"{name}.w", _uniform_init(rng, (n_in, n_out), n_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(n_out, dtype=dtype))
        self._x = None

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy, need_dx=True):
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        if not need_dx:
            return None
        return dy @ self.w.value.T


class ReLU:
    """Rectifier, applied in place (callers own the incoming buffer)."""

    def __init__(self):
        self._y = None

    def parameters(self):
        return []

    def forward(self, x):
        np.maximum(x, 0, out=x)
        self._y = x
        return x

    def backward(self, dy):
        return np.where(self._y > 0, dy, 0)


class BatchNorm:
    """Per-feature batch normalization over the leading axis."""

    def __init__(self, name, n_features, rng=None, dtype=np.float32,
                 momentum=0.1, epsilon=1e-5):
        self.gamma = Parameter(f"{name}.gamma", np.ones(n_features, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(n_features, dtype=dtype))
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, train: bool):
        if train:
            if x.shape[0] < 2:
                raise ValidationError(
                    "batch normalization needs at least 2 batch elements in train mode"
                )
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, train)
        return self.gamma.value * x_hat + self.beta.value

    def backward(self, dy):
        x_hat, inv_std, train = self._cache
        self.gamma.grad += (dy * x_hat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dx_hat = dy * self.gamma.value
        if not train:
            dx_hat *= inv_std
            return dx_hat
        # batch statistics were functions of x, so their gradients fold back in
        m2 = np.mean(dx_hat * x_hat, axis=0)
        dx_hat -= dx_hat.mean(axis=0)
        dx_hat -= x_hat * m2
        dx_hat *= inv_std
        return dx_hat


class Conv1d:
    """Same-length 1-D convolution over (batch, channels, time)."""

    def __init__(self, name, n_in, n_out, kernel, rng, dtype=np.float32):
        if kernel % 2 == 0:
            raise ValidationError(f"kernel size must be odd, got {kernel}")
        fan_in = n_in * kernel
        self.w = Parameter(f"{name}.w", _uniform_init(rng, (n_out, n_in, kernel), fan_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(n_out, dtype=dtype))
        self.kernel = kernel
        self._cache = None

    def parameters(self):
        return [self.w, self.b]

    def _im2col(self, x):
        n_b, n_c, n_w = x.shape
        k = self.kernel
        pad = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        col = np.empty((n_b, n_w, n_c, k), dtype=x.dtype)
        for tap in range(k):
            col[:, :, :, tap] = xp[:, :, tap : tap + n_w].transpose(0, 2, 1)
        return col.reshape(n_b * n_w, n_c * k)

    def forward(self, x):
        n_b, n_c, n_w = x.shape
        if n_c != self.w.value.shape[1]:
            raise DimensionError(
                f"expected {self.w.value.shape[1]} input channels, got {n_c}"
            )
        col = self._im2col(x)
        w2d = self.w.value.reshape(self.w.value.shape[0], -1)
        y = col @ w2d.T + self.b.value
        self._cache = (col, x.shape)
        return y.reshape(n_b, n_w, -1).transpose(0, 2, 1)

    def backward(self, dy, need_dx=True):
        col, x_shape = self._cache
        n_b, n_c, n_w = x_shape
        k = self.kernel
        pad = k // 2
        dy2d = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(n_b * n_w, -1)
        w2d = self.w.value.reshape(self.w.value.shape[0], -1)
        self.w.grad += (dy2d.T @ col).reshape(self.w.value.shape)
        self.b.grad += dy2d.sum(axis=0)
        if not need_dx:
            return None
        dcol = (dy2d @ w2d).reshape(n_b, n_w, n_c, k)
        dxp = np.zeros((n_b, n_c, n_w + 2 * pad), dtype=dy.dtype)
        for tap in range(k):
            dxp[:, :, tap : tap + n_w] += dcol[:, :, :, tap].transpose(0, 2, 1)
        return dxp[:, :, pad : pad + n_w]


class LSTMStack:
    """Stacked LSTM over time-major sequences, forget-gate bias +1."""

    def __init__(self, name, n_in, hidden, n_layers, rng, dtype=np.float32):
        self.hidden = hidden
        self.layers = []
        for layer in range(n_layers):
            size_in = n_in if layer == 0 else hidden
            w_ih = Parameter(
                f"{name}{layer}.w_ih", _uniform_init(rng, (size_in, 4 * hidden), hidden, dtype)
            )
            w_hh = Parameter(
                f"{name}{layer}.w_hh", _uniform_init(rng, (hidden, 4 * hidden), hidden, dtype)
            )
            b = Parameter(f"{name}{layer}.b", np.zeros(4 * hidden, dtype=dtype))
            b.value[hidden : 2 * hidden] = 1.0
            self.layers.append((w_ih, w_hh, b))
        self._cache = None

    def parameters(self):
        return [p for triple in self.layers for p in triple]

    def forward(self, x):
        """x: (W, B, n_in) time-major. Returns the full top-layer (W, B, H)."""
        n_w, n_b, _ = x.shape
        h0 = np.zeros((n_b, self.hidden), dtype=x.dtype)
        c0 = np.zeros((n_b, self.hidden), dtype=x.dtype)
        caches = []
        seq = x
        for w_ih, w_hh, b in self.layers:
            gates = seq.reshape(n_w * n_b, -1) @ w_ih.value + b.value
            gates = np.ascontiguousarray(gates.reshape(n_w, n_b, 4 * self.hidden))
            h_seq, c_seq = backend.lstm_seq_forward(gates, w_hh.value, h0, c0)
            caches.append((seq, gates, h_seq, c_seq, h0, c0))
            seq = h_seq
        self._cache = caches
        return seq

    def backward(self, d_top):
        """d_top: (W, B, H) gradient for the top layer's hidden sequence."""
        d_seq = d_top
        d_x = None
        for (w_ih, w_hh, b), cache in zip(reversed(self.layers), reversed(self._cache)):
            seq_in, gates, h_seq, c_seq, h0, c0 = cache
            d_gates, d_w_hh, _, _ = backend.lstm_seq_backward(
                w_hh.value, gates, h_seq, c_seq, h0, c0, d_seq
            )
            w_hh.grad += d_w_hh
            n_w, n_b, _ = d_gates.shape
            dg2d = d_gates.reshape(n_w * n_b, -1)
            w_ih.grad += seq_in.reshape(n_w * n_b, -1).T @ dg2d
            b.grad += dg2d.sum(axis=0)
            d_x = (dg2d @ w_ih.value.T).reshape(seq_in.shape)
            d_seq = d_x
        return d_x


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and gradient wrt logits for integer labels."""
    p = softmax(logits)
    n = logits.shape[0]
    eps = np.finfo(p.dtype).tiny
    loss = -np.log(p[np.arange(n), labels] + eps).mean()
    dlogits = p
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits
