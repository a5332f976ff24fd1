"""Joint training of the extractor and decoder with Adam.

Deterministic for a fixed seed and backend: initialization, batch order
and gradient accumulation order are all derived from the seed. The model
returned is the checkpoint from the epoch with the best validation
accuracy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, FormatError, NumericError, ValidationError
from ..seeding import derive_rng
from ..windowing import WindowSample
from . import backend
from .layers import cross_entropy
from .models import ArchConfig, JointModel


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam hyperparameters")


class Adam:
    def __init__(self, params, config: TrainConfig):
        self.params = params
        self.config = config
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        cfg = self.config
        for p, m, v in zip(self.params, self.m, self.v):
            backend.adam_step(
                p.value, p.grad, m, v, self.t,
                cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps,
            )


@dataclass
class TrainResult:
    model: JointModel
    curves: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = 0.0


def stack_features(samples: list[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sample features and labels into contiguous training arrays."""
    if not samples:
        raise ValidationError("empty sample list")
    feats = np.stack([s.features for s in samples]).astype(np.float32, copy=False)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return feats, labels


def _snapshot(model: JointModel) -> dict:
    blobs = {p.name: p.value.copy() for p in model.parameters()}
    for name, arr in model.state_arrays().items():
        blobs[name] = arr.copy()
    return blobs


def _restore(model: JointModel, blobs: dict) -> None:
    for p in model.parameters():
        p.value[...] = blobs[p.name]
    for name, arr in model.state_arrays().items():
        arr[...] = blobs[name]


def _accuracy(logits, labels) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def _eval_batches(model, feats, labels, batch_size):
    total_loss = 0.0
    correct = 0
    for lo in range(0, feats.shape[0], batch_size):
        sub = slice(lo, min(lo + batch_size, feats.shape[0]))
        logits = model.forward(feats[sub], train=False)
        loss, _ = cross_entropy(logits, labels[sub])
        total_loss += loss * (sub.stop - sub.start)
        correct += int((logits.argmax(axis=1) == labels[sub]).sum())
    n = feats.shape[0]
    return total_loss / n, correct / n


def train_decoder(
    train_samples: list[WindowSample],
    val_samples: list[WindowSample],
    config: TrainConfig,
    mode: str,
    q: int | None = None,
    arch: ArchConfig | None = None,
    per_roi_extractor: bool = False,
    n_classes: int | None = None,
) -> TrainResult:
    """Train a decoder (plus extractor in representation mode) end to end."""
    config.validate()
    feats, labels = stack_features(train_samples)
    val_feats, val_labels = stack_features(val_samples)
    n_classes = n_classes or int(max(labels.max(), val_labels.max())) + 1
    if len(np.unique(labels)) < n_classes:
        raise ValidationError("training labels do not cover every class")
    n_rois = feats.shape[1]

    rng = derive_rng(config.seed, "train-init")
    model = JointModel(
        mode, n_rois, n_classes, rng, q=q, arch=arch, per_roi_extractor=per_roi_extractor
    )
    optimizer = Adam(model.parameters(), config)
    order_rng = derive_rng(config.seed, "train-batches")

    result = TrainResult(model=model)
    best = _snapshot(model)
    n = feats.shape[0]
    for epoch in range(config.epochs):
        perm = order_rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            batch = np.ascontiguousarray(feats[idx])
            batch_labels = labels[idx]
            model.zero_grad()
            logits = model.forward(batch, train=True)
            loss, dlogits = cross_entropy(logits, batch_labels)
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}")
            model.backward(dlogits)
            optimizer.step()
            epoch_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == batch_labels).sum())
        val_loss, val_acc = _eval_batches(model, val_feats, val_labels, config.batch_size)
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "train_acc": correct / n,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        result.curves.append(record)
        if val_acc > result.best_val_accuracy or result.best_epoch < 0:
            result.best_val_accuracy = val_acc
            result.best_epoch = epoch
            best = _snapshot(model)
    _restore(model, best)
    return result


def curves_to_csv(curves: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for row in curves:
            fh.write(
                f"{row['epoch']},{row['train_loss']!r},{row['train_acc']!r},"
                f"{row['val_loss']!r},{row['val_acc']!r}\n"
            )


CHECKPOINT_MAGIC = b"AWNN"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: JointModel, path, window: int) -> None:
    """Binary checkpoint: magic, geometry, then named float32 blobs."""
    blobs = _snapshot(model)
    arch = model.arch
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        per_roi = int(model.extractor is not None and model.extractor.per_roi)
        fh.write(
            struct.pack(
                "<IBB5I",
                CHECKPOINT_VERSION,
                1 if model.mode == "awats" else 0,
                per_roi,
                model.q or 0,
                model.n_rois,
                window,
                model.n_classes,
                len(blobs),
            )
        )
        fh.write(
            struct.pack(
                "<7I",
                arch.extractor_hidden, arch.conv_filters, arch.conv_layers,
                arch.kernel, arch.lstm_hidden, arch.lstm_layers, arch.head_hidden,
            )
        )
        for name in sorted(blobs):
            encoded = name.encode()
            data = np.ascontiguousarray(blobs[name], dtype="<f4")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", data.size))
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[JointModel, int]:
    """Rebuild a model from a checkpoint; returns (model, window)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    version, mode_flag, per_roi, q, n_rois, window, n_classes, n_blobs = struct.unpack_from(
        "<IBB5I", blob, 4
    )
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<IBB5I")
    arch_vals = struct.unpack_from("<7I", blob, offset)
    offset += struct.calcsize("<7I")
    arch = ArchConfig(*arch_vals)
    mode = "awats" if mode_flag else "ats"
    model = JointModel(
        mode, n_rois, n_classes, derive_rng(0, "checkpoint-load"),
        q=q or None, arch=arch, per_roi_extractor=bool(per_roi),
    )
    named = {p.name: p.value for p in model.parameters()}
    named.update(model.state_arrays())
    for _ in range(n_blobs):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode()
        offset += name_len
        (count,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        if name not in named:
            raise FormatError(f"checkpoint blob {name!r} does not match the model")
        if named[name].size != count:
            raise FormatError(f"checkpoint blob {name!r} has wrong size")
        named[name][...] = values.reshape(named[name].shape)
    return model, window
