"""ROI attribution for a trained decoder.

Shapley values over ROIs with a baseline-replacement value function (the
softmax probability of the sample's true class), estimated by Monte-Carlo
permutation sampling or, for small atlases, by exact enumeration over all
coalitions. Also: per-state normalization, a logistic-regression
coefficient attribution, and aggregation onto named networks.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ValidationError
from .seeding import derive_rng
from .windowing import WindowSample

log = logging.getLogger(__name__)

EXACT_MAX_ROIS = 10


@dataclass
class ContributionMap:
    """Per-state, per-ROI attribution scores."""

    raw: np.ndarray  # (C, R)
    normalized: np.ndarray  # (C, R)
    n_simulations: int
    baseline_kind: str  # "zeros" or "dataset_mean"
    unnormalized_states: list[int] = field(default_factory=list)


@dataclass
class NetworkMap:
    """Total assignment of ROI ids (1-based) to network ids (1..K)."""

    assignment: dict[int, int]
    names: dict[int, str]

    @property
    def n_networks(self) -> int:
        return max(self.names) if self.names else max(self.assignment.values())


def _replace_rois(features: np.ndarray, keep: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    """Features with every ROI outside ``keep`` swapped for the baseline."""
    out = np.where(keep[:, None] if features.ndim == 2 else keep[(slice(None),) + (None,) * (features.ndim - 1)],
                   features, baseline)
    return out


def _make_baseline(samples_feats: np.ndarray, kind: str) -> np.ndarray:
    if kind == "zeros":
        return np.zeros(samples_feats.shape[1:], dtype=samples_feats.dtype)
    if kind == "dataset_mean":
        return samples_feats.mean(axis=0)
    raise ConfigError(f"unknown baseline kind {kind!r}")


def _value_batch(model, feats_batch: np.ndarray, label: int) -> np.ndarray:
    probs = model.predict_proba(feats_batch)
    return probs[:, label]


def _exact_shapley_sample(model, feats, label, baseline) -> np.ndarray:
    """Exact Shapley values for one sample by coalition enumeration."""
    n_rois = feats.shape[0]
    masks = []
    for size in range(n_rois + 1):
        for combo in combinations(range(n_rois), size):
            keep = np.zeros(n_rois, dtype=bool)
            keep[list(combo)] = True
            masks.append(keep)
    masks = np.array(masks)
    batch = np.stack([_replace_rois(feats, keep, baseline) for keep in masks])
    values = _value_batch(model, batch, label)
    value_of = {masks[i].tobytes(): values[i] for i in range(len(masks))}

    phi = np.zeros(n_rois, dtype=np.float64)
    fact = math.factorial
    denom = fact(n_rois)
    for i in range(n_rois):
        for keep in masks:
            if keep[i]:
                continue
            size = int(keep.sum())
            weight = fact(size) * fact(n_rois - size - 1) / denom
            with_i = keep.copy()
            with_i[i] = True
            phi[i] += weight * (value_of[with_i.tobytes()] - value_of[keep.tobytes()])
    return phi


def _mc_shapley_sample(model, feats, label, baseline, n_sims, rng_for) -> np.ndarray:
    """Permutation-sampling estimate; each permutation's marginals telescope."""
    n_rois = feats.shape[0]
    phi = np.zeros(n_rois, dtype=np.float64)
    for sim in range(n_sims):
        order = rng_for(sim).permutation(n_rois)
        keep = np.zeros(n_rois, dtype=bool)
        batch = np.empty((n_rois + 1,) + feats.shape, dtype=feats.dtype)
        batch[0] = _replace_rois(feats, keep, baseline)
        for step, roi in enumerate(order, start=1):
            keep[roi] = True
            batch[step] = _replace_rois(feats, keep, baseline)
        values = _value_batch(model, batch, label)
        marginals = np.diff(values)
        phi[order] += marginals
    return phi / n_sims


def shapley_mc(
    model,
    samples: list[WindowSample],
    n_sims: int = 64,
    baseline_kind: str = "dataset_mean",
    seed: int = 0,
    exact: bool | None = None,
    n_threads: int = 1,
) -> ContributionMap:
    """Per-state mean Shapley values of each ROI for a trained model.

    ``exact=None`` enables exact enumeration automatically when the atlas
    has at most 10 ROIs. Per-(sample, permutation) generators are derived
    from the seed, so results are independent of thread scheduling.
    """
    if n_sims < 1:
        raise ConfigError(f"n_sims must be >= 1, got {n_sims}")
    if not samples:
        raise ValidationError("no samples for attribution")
    feats_all = np.stack([s.features for s in samples]).astype(np.float32)
    labels = np.array([s.label for s in samples])
    n_rois = feats_all.shape[1]
    n_classes = model.n_classes
    baseline = _make_baseline(feats_all, baseline_kind)
    use_exact = exact if exact is not None else n_rois <= EXACT_MAX_ROIS

    def one_sample(idx: int) -> np.ndarray:
        feats = feats_all[idx]
        label = int(labels[idx])
        if use_exact:
            return _exact_shapley_sample(model, feats, label, baseline)
        return _mc_shapley_sample(
            model, feats, label, baseline, n_sims,
            lambda sim: derive_rng(seed, "shapley", idx, sim),
        )

    per_sample = np.empty((len(samples), n_rois), dtype=np.float64)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for idx, phi in enumerate(pool.map(one_sample, range(len(samples)))):
                per_sample[idx] = phi
    else:
        for idx in range(len(samples)):
            per_sample[idx] = one_sample(idx)

    raw = np.zeros((n_classes, n_rois), dtype=np.float64)
    for c in range(n_classes):
        mask = labels == c
        if mask.any():
            raw[c] = per_sample[mask].mean(axis=0)
    cmap = ContributionMap(
        raw=raw,
        normalized=raw.copy(),
        n_simulations=n_sims,
        baseline_kind=baseline_kind,
    )
    return normalize_contributions(cmap)


def exact_shapley(model, sample: WindowSample, baseline_kind="dataset_mean",
                  baseline: np.ndarray | None = None) -> np.ndarray:
    """Exact per-ROI Shapley values for a single sample (oracle helper)."""
    feats = sample.features.astype(np.float32)
    if baseline is None:
        baseline = _make_baseline(feats[None], baseline_kind)
    return _exact_shapley_sample(model, feats, int(sample.label), baseline)


def normalize_contributions(cmap: ContributionMap) -> ContributionMap:
    """Scale each state's row by its maximum positive entry.

    Rows without a positive entry are flagged and passed through unchanged;
    the operation is idempotent.
    """
    normalized = cmap.raw.copy()
    flagged = []
    for c in range(cmap.raw.shape[0]):
        peak = cmap.raw[c].max(initial=0.0)
        if peak > 0:
            normalized[c] = cmap.raw[c] / peak
        else:
            flagged.append(c)
    return ContributionMap(
        raw=cmap.raw.copy(),
        normalized=normalized,
        n_simulations=cmap.n_simulations,
        baseline_kind=cmap.baseline_kind,
        unnormalized_states=flagged,
    )


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logistic_contributions(
    samples: list[WindowSample],
    n_classes: int,
    l2_strength: float = 1.0,
    max_iter: int = 50000,
    tol: float = 1e-6,
    init: np.ndarray | None = None,
) -> ContributionMap:
    """Multinomial logistic regression coefficients as ROI contributions.

    Full-batch gradient descent on the L2-penalized objective (bias
    unpenalized) until the gradient norm drops below ``tol``. The
    contribution of an ROI to a class is the mean coefficient over that
    ROI's window time points.
    """
    if not samples:
        raise ValidationError("no samples for logistic attribution")
    feats = np.stack([s.features.reshape(-1) for s in samples]).astype(np.float64)
    labels = np.array([s.label for s in samples])
    n, dim = feats.shape
    n_rois, width = samples[0].features.shape[0], samples[0].features.shape[1]

    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0

    # Lipschitz bound of the gradient: 0.5 * smax(X)^2 / n + l2
    gram_vec = np.ones(dim)
    for _ in range(200):
        nxt = feats.T @ (feats @ gram_vec)
        norm = np.linalg.norm(nxt)
        if norm == 0:
            break
        gram_vec = nxt / norm
    smax_sq = float(gram_vec @ (feats.T @ (feats @ gram_vec)))
    step = 1.0 / (0.5 * smax_sq / n + l2_strength)

    weights = np.zeros((n_classes, dim)) if init is None else init.copy()
    bias = np.zeros(n_classes)
    grad_norm = math.inf
    for _ in range(max_iter):
        probs = _softmax_rows(feats @ weights.T + bias)
        err = (probs - onehot) / n
        grad_w = err.T @ feats + l2_strength * weights
        grad_b = err.sum(axis=0)
        grad_norm = math.sqrt(float((grad_w**2).sum() + (grad_b**2).sum()))
        if grad_norm < tol:
            break
        weights -= step * grad_w
        bias -= step * grad_b
    else:
        log.warning("logistic attribution stopped at gradient norm %.3e", grad_norm)

    raw = weights.reshape(n_classes, n_rois, width).mean(axis=2)
    cmap = ContributionMap(
        raw=raw, normalized=raw.copy(), n_simulations=0, baseline_kind="zeros"
    )
    return normalize_contributions(cmap)


def network_aggregate(cmap: ContributionMap, nets: NetworkMap) -> np.ndarray:
    """Mean normalized contribution per (state, network); (C, K) array."""
    n_classes, n_rois = cmap.normalized.shape
    n_networks = nets.n_networks
    sums = np.zeros((n_classes, n_networks))
    counts = np.zeros(n_networks)
    for roi in range(1, n_rois + 1):
        if roi not in nets.assignment:
            raise ValidationError(f"ROI {roi} has no network assignment")
        net = nets.assignment[roi]
        if not 1 <= net <= n_networks:
            raise ValidationError(f"network id {net} out of range 1..{n_networks}")
        sums[:, net - 1] += cmap.normalized[:, roi - 1]
        counts[net - 1] += 1
    with np.errstate(invalid="ignore"):
        out = sums / counts
    return np.where(counts > 0, out, 0.0)


def load_network_map(path) -> NetworkMap:
    """CSV with (roi_id, network_id, name) rows; header optional."""
    assignment: dict[int, int] = {}
    names: dict[int, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if line_no == 1 and not parts[0].lstrip("-").isdigit():
            continue
        if len(parts) < 2:
            raise ValidationError(f"{path}:{line_no}: expected 'roi_id,network_id[,name]'")
        roi, net = int(parts[0]), int(parts[1])
        assignment[roi] = net
        if len(parts) > 2 and parts[2]:
            names[net] = parts[2]
    if not assignment:
        raise ValidationError(f"{path}: no assignments found")
    for net in set(assignment.values()):
        names.setdefault(net, f"network{net}")
    return NetworkMap(assignment=assignment, names=names)


def contributions_to_csv(cmap: ContributionMap, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("state,roi_id,raw,normalized\n")
        n_classes, n_rois = cmap.raw.shape
        for c in range(n_classes):
            for r in range(n_rois):
                fh.write(f"{c},{r + 1},{cmap.raw[c, r]!r},{cmap.normalized[c, r]!r}\n")


def network_csv(cmap: ContributionMap, nets: NetworkMap, path) -> None:
    table = network_aggregate(cmap, nets)
    with open(path, "w", newline="") as fh:
        fh.write("state,network,mean_contribution\n")
        for c in range(table.shape[0]):
            for k in range(table.shape[1]):
                fh.write(f"{c},{nets.names.get(k + 1, f'network{k + 1}')},{table[c, k]!r}\n")
