"""The trainable pieces: per-ROI feature extractor and the sequence decoder.

The extractor turns each 3q-dimensional spatial representation into one
scalar (dense 3q->hidden, ReLU, batch norm, dense hidden->1). One parameter
set is shared across ROIs by default; a per-ROI variant keeps an independent
extractor per region. The decoder is a conv stack over time with ROIs as
input channels, a stacked LSTM, and a dense head emitting class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ValidationError
from .layers import BatchNorm, Conv1d, Dense, LSTMStack, Parameter, ReLU, softmax


@dataclass
class ArchConfig:
    """Width/depth knobs; defaults match the full-size decoder."""

    extractor_hidden: int = 128
    conv_filters: int = 128
    conv_layers: int = 3
    kernel: int = 3
    lstm_hidden: int = 128
    lstm_layers: int = 3
    head_hidden: int = 64


class SharedExtractor:
    """One extractor applied to every (ROI, TR) representation vector."""

    per_roi = False

    def __init__(self, q, rng, hidden=128, dtype=np.float32):
        self.q = q
        self.dense1 = Dense("extractor.dense1", 3 * q, hidden, rng, dtype)
        self.relu = ReLU()
        self.bn = BatchNorm("extractor.bn", hidden, dtype=dtype)
        self.dense2 = Dense("extractor.dense2", hidden, 1, rng, dtype)

    def parameters(self):
        return self.dense1.parameters() + self.bn.parameters() + self.dense2.parameters()

    def state_arrays(self):
        return {
            "extractor.bn.running_mean": self.bn.running_mean,
            "extractor.bn.running_var": self.bn.running_var,
        }

    def forward_flat(self, x, train: bool):
        """x: (N, 3q) -> (N,) scalar series values."""
        h = self.bn.forward(self.relu.forward(self.dense1.forward(x)), train)
        return self.dense2.forward(h)[:, 0]

    def backward_flat(self, dy):
        dh = self.dense2.backward(dy[:, None])
        self.dense1.backward(self.relu.backward(self.bn.backward(dh)), need_dx=False)

    def forward_windows(self, x, train: bool):
        """x: (B, R, W, 3q) -> (B, R, W); all positions share the batch-norm batch."""
        n_b, n_r, n_w, width = x.shape
        if width != 3 * self.q:
            raise DimensionError(f"expected inner width {3 * self.q}, got {width}")
        y = self.forward_flat(x.reshape(-1, width), train)
        return y.reshape(n_b, n_r, n_w)

    def backward_windows(self, dy):
        self.backward_flat(dy.reshape(-1))


class PerRoiExtractor:
    """Independent extractor parameters for each ROI, evaluated in one shot."""

    per_roi = True

    def __init__(self, q, n_rois, rng, hidden=128, dtype=np.float32):
        self.q = q
        self.n_rois = n_rois
        self.hidden = hidden
        bound1 = 1.0 / np.sqrt(3 * q)
        bound2 = 1.0 / np.sqrt(hidden)
        self.w1 = Parameter(
            "extractor.dense1.w",
            rng.uniform(-bound1, bound1, size=(n_rois, 3 * q, hidden)).astype(dtype),
        )
        self.b1 = Parameter("extractor.dense1.b", np.zeros((n_rois, hidden), dtype=dtype))
        self.gamma = Parameter("extractor.bn.gamma", np.ones((n_rois, hidden), dtype=dtype))
        self.beta = Parameter("extractor.bn.beta", np.zeros((n_rois, hidden), dtype=dtype))
        self.running_mean = np.zeros((n_rois, hidden), dtype=dtype)
        self.running_var = np.ones((n_rois, hidden), dtype=dtype)
        self.w2 = Parameter(
            "extractor.dense2.w",
            rng.uniform(-bound2, bound2, size=(n_rois, hidden)).astype(dtype),
        )
        self.b2 = Parameter("extractor.dense2.b", np.zeros(n_rois, dtype=dtype))
        self.momentum = 0.1
        self.epsilon = 1e-5
        self._cache = None

    def parameters(self):
        return [self.w1, self.b1, self.gamma, self.beta, self.w2, self.b2]

    def state_arrays(self):
        return {
            "extractor.bn.running_mean": self.running_mean,
            "extractor.bn.running_var": self.running_var,
        }

    def forward_windows(self, x, train: bool):
        """x: (B, R, W, 3q) -> (B, R, W); batch norm runs per (ROI, feature)."""
        if x.shape[1] != self.n_rois:
            raise DimensionError(f"expected {self.n_rois} ROIs, got {x.shape[1]}")
        z = np.einsum("brwi,rih->brwh", x, self.w1.value) + self.b1.value[None, :, None, :]
        mask = z > 0
        a = np.where(mask, z, 0)
        if train:
            n = a.shape[0] * a.shape[2]
            if n < 2:
                raise ValidationError(
                    "batch normalization needs at least 2 batch elements in train mode"
                )
            mean = a.mean(axis=(0, 2))
            var = a.var(axis=(0, 2))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        a_hat = (a - mean[None, :, None, :]) * inv_std[None, :, None, :]
        y = (
            np.einsum("brwh,rh->brw", a_hat * self.gamma.value[None, :, None, :]
                      + self.beta.value[None, :, None, :], self.w2.value)
            + self.b2.value[None, :, None]
        )
        self._cache = (x, mask, a_hat, inv_std, train)
        return y

    def backward_windows(self, dy):
        x, mask, a_hat, inv_std, train = self._cache
        bn_out_grad = np.einsum("brw,rh->brwh", dy, self.w2.value)
        bn_out = a_hat * self.gamma.value[None, :, None, :] + self.beta.value[None, :, None, :]
        self.w2.grad += np.einsum("brwh,brw->rh", bn_out, dy)
        self.b2.grad += dy.sum(axis=(0, 2))
        self.gamma.grad += (bn_out_grad * a_hat).sum(axis=(0, 2))
        self.beta.grad += bn_out_grad.sum(axis=(0, 2))
        da_hat = bn_out_grad * self.gamma.value[None, :, None, :]
        if train:
            da = (
                da_hat
                - da_hat.mean(axis=(0, 2), keepdims=True)
                - a_hat * (da_hat * a_hat).mean(axis=(0, 2), keepdims=True)
            ) * inv_std[None, :, None, :]
        else:
            da = da_hat * inv_std[None, :, None, :]
        dz = np.where(mask, da, 0)
        self.w1.grad += np.einsum("brwi,brwh->rih", x, dz)
        self.b1.grad += dz.sum(axis=(0, 2))


class StdfmriDecoder:
    """Conv-over-time stack (ROIs as channels), stacked LSTM, dense head."""

    def __init__(self, n_rois, n_classes, rng, arch: ArchConfig | None = None,
                 dtype=np.float32):
        arch = arch or ArchConfig()
        self.arch = arch
        self.n_rois = n_rois
        self.n_classes = n_classes
        self.convs = []
        self.conv_relus = []
        for i in range(arch.conv_layers):
            n_in = n_rois if i == 0 else arch.conv_filters
            self.convs.append(
                Conv1d(f"decoder.conv{i}", n_in, arch.conv_filters, arch.kernel, rng, dtype)
            )
            self.conv_relus.append(ReLU())
        self.lstm = LSTMStack("decoder.lstm", arch.conv_filters, arch.lstm_hidden,
                              arch.lstm_layers, rng, dtype)
        self.head1 = Dense("decoder.head1", arch.lstm_hidden, arch.head_hidden, rng, dtype)
        self.head_relu = ReLU()
        self.head2 = Dense("decoder.head2", arch.head_hidden, n_classes, rng, dtype)
        self._seq_len = None

    def parameters(self):
        params = []
        for conv in self.convs:
            params.extend(conv.parameters())
        params.extend(self.lstm.parameters())
        params.extend(self.head1.parameters() + self.head2.parameters())
        return params

    def forward(self, x, train: bool):
        """x: (B, R, W) -> logits (B, C)."""
        if x.ndim != 3 or x.shape[1] != self.n_rois:
            raise DimensionError(
                f"decoder expects (B, {self.n_rois}, W) input, got {x.shape}"
            )
        h = x
        for conv, relu in zip(self.convs, self.conv_relus):
            h = relu.forward(conv.forward(h))
        seq = np.ascontiguousarray(h.transpose(2, 0, 1))  # (W, B, F)
        self._seq_len = seq.shape[0]
        h_seq = self.lstm.forward(seq)
        last = h_seq[-1]
        return self.head2.forward(self.head_relu.forward(self.head1.forward(last)))

    def backward(self, dlogits, need_dx=True):
        d_last = self.head1.backward(self.head_relu.backward(self.head2.backward(dlogits)))
        d_h_seq = np.zeros(
            (self._seq_len,) + d_last.shape, dtype=d_last.dtype
        )
        d_h_seq[-1] = d_last
        d_seq = self.lstm.backward(d_h_seq)
        dh = d_seq.transpose(1, 2, 0)  # (B, F, W)
        pairs = list(zip(self.convs, self.conv_relus))
        for i, (conv, relu) in enumerate(reversed(pairs)):
            last = i == len(pairs) - 1
            dh = conv.backward(relu.backward(dh), need_dx=need_dx or not last)
        return dh


class JointModel:
    """Decoder plus (in representation mode) the jointly trained extractor."""

    def __init__(self, mode, n_rois, n_classes, rng, q=None,
                 arch: ArchConfig | None = None, per_roi_extractor=False,
                 dtype=np.float32):
        if mode not in ("awats", "ats"):
            raise ValidationError(f"unknown model mode {mode!r}")
        if mode == "awats" and q is None:
            raise ValidationError("representation mode requires q")
        arch = arch or ArchConfig()
        self.mode = mode
        self.q = q
        self.arch = arch
        self.n_rois = n_rois
        self.n_classes = n_classes
        self.extractor = None
        if mode == "awats":
            if per_roi_extractor:
                self.extractor = PerRoiExtractor(q, n_rois, rng, arch.extractor_hidden, dtype)
            else:
                self.extractor = SharedExtractor(q, rng, arch.extractor_hidden, dtype)
        self.decoder = StdfmriDecoder(n_rois, n_classes, rng, arch, dtype)

    def parameters(self):
        params = [] if self.extractor is None else list(self.extractor.parameters())
        return params + self.decoder.parameters()

    def state_arrays(self):
        return {} if self.extractor is None else self.extractor.state_arrays()

    def forward(self, feats, train: bool):
        if self.mode == "awats":
            series = self.extractor.forward_windows(feats, train)
            return self.decoder.forward(series, train)
        return self.decoder.forward(feats, train)

    def backward(self, dlogits):
        d_series = self.decoder.backward(dlogits, need_dx=self.mode == "awats")
        if self.mode == "awats":
            self.extractor.backward_windows(d_series)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def predict_logits(self, feats, batch_size=256):
        out = []
        for lo in range(0, feats.shape[0], batch_size):
            out.append(self.forward(feats[lo : lo + batch_size], train=False))
        return np.concatenate(out, axis=0)

    def predict_proba(self, feats, batch_size=256):
        return softmax(self.predict_logits(feats, batch_size))
