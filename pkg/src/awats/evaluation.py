"""Experiment protocol, decoding metrics, significance testing, PCA tools.

Repeated random train/val/test splits, macro-averaged classification
metrics, a self-contained Welch t-test (incomplete-beta tail evaluation),
the PCA-based series extractor, a 2-D PCA embedding, and the
inter/intra-class separability ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, StratificationError, ValidationError
from .parcellation import SeriesMatrix
from .resampling import ReprTensor
from .seeding import derive_rng


@dataclass
class SplitPlan:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    repetitions: int = 10
    seed: int = 0
    unit: str = "sample"  # or "subject"

    def validate(self) -> None:
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.fractions}")
        if any(f < 0 for f in self.fractions):
            raise ConfigError("split fractions must be non-negative")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.unit not in ("sample", "subject"):
            raise ConfigError(f"unknown split unit {self.unit!r}")


def _partition_sizes(n: int, fractions) -> tuple[int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val


def make_splits(labels, plan: SplitPlan, subjects=None):
    """Repeated disjoint (train, val, test) index partitions.

    In subject mode all samples of one subject land in the same partition.
    Raises StratificationError when a class is missing from a training
    partition or any partition comes out empty.
    """
    plan.validate()
    labels = np.asarray(labels)
    n = len(labels)
    if plan.unit == "subject":
        if subjects is None:
            raise ValidationError("subject-unit splits require subject ids")
        subjects = np.asarray(subjects)
    splits = []
    for rep in range(plan.repetitions):
        rng = derive_rng(plan.seed, "split", rep)
        if plan.unit == "sample":
            perm = rng.permutation(n)
            n_train, n_val = _partition_sizes(n, plan.fractions)
            train = perm[:n_train]
            val = perm[n_train : n_train + n_val]
            test = perm[n_train + n_val :]
        else:
            uniq = np.unique(subjects)
            sperm = rng.permutation(len(uniq))
            n_train, n_val = _partition_sizes(len(uniq), plan.fractions)
            train_subj = set(uniq[sperm[:n_train]])
            val_subj = set(uniq[sperm[n_train : n_train + n_val]])
            groups = ([], [], [])
            for i, subj in enumerate(subjects):
                if subj in train_subj:
                    groups[0].append(i)
                elif subj in val_subj:
                    groups[1].append(i)
                else:
                    groups[2].append(i)
            train, val, test = (np.array(g, dtype=int) for g in groups)
        for name, part in (("train", train), ("validation", val), ("test", test)):
            if len(part) == 0:
                raise StratificationError(f"{name} partition is empty in repetition {rep}")
        missing = set(np.unique(labels)) - set(np.unique(labels[train]))
        if missing:
            raise StratificationError(
                f"classes {sorted(missing)} absent from training split in repetition {rep}"
            )
        splits.append((train, val, test))
    return splits


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: list[dict] = field(default_factory=list)
    confusion: np.ndarray | None = None


def compute_metrics(predictions, labels, n_classes: int) -> MetricsReport:
    """Accuracy plus macro-averaged precision/recall/F1 over all classes."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise DomainError("predictions and labels must be equal-length and nonempty")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    diag = np.diag(confusion).astype(float)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(support > 0, diag / support, 0.0)
        both = precision + recall
        f1 = np.where(both > 0, 2 * precision * recall / both, 0.0)
    per_class = [
        {
            "class": c,
            "precision": float(precision[c]),
            "recall": float(recall[c]),
            "f1": float(f1[c]),
            "support": int(support[c]),
        }
        for c in range(n_classes)
    ]
    return MetricsReport(
        accuracy=float(diag.sum() / confusion.sum()),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        per_class=per_class,
        confusion=confusion,
    )


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    max_iter = 500
    eps = 1e-15
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    frac = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        frac *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < eps:
            return frac
    return frac


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) evaluated via the continued fraction, accurate to ~1e-10."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_ttest(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DomainError("welch_ttest needs at least 2 observations per sample")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    ma, mb = a.mean(), b.mean()
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return 0.0, 1.0
        return math.copysign(math.inf, ma - mb), 0.0
    sa = va / a.size
    sb = vb / b.size
    t = (ma - mb) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (a.size - 1) + sb**2 / (b.size - 1))
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return float(t), float(min(max(p, 0.0), 1.0))


def _power_iteration(cov: np.ndarray, tol: float = 1e-10, max_iter: int = 10000):
    """Dominant eigenvector of a symmetric PSD matrix, deterministic start."""
    start = int(np.argmax(np.diag(cov)))
    v = cov[:, start].copy()
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros(cov.shape[0]), 0.0
    v /= norm
    lam = 0.0
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        lam = float(w @ cov @ w)
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    return v, lam


def _fix_sign(v: np.ndarray) -> np.ndarray:
    peak = int(np.argmax(np.abs(v)))
    return -v if v[peak] < 0 else v


def pca_first_component(matrix: np.ndarray) -> np.ndarray:
    """Scores of the first principal component of a (T, d) matrix.

    The sign is fixed so the largest-magnitude loading is positive; an
    all-constant matrix yields all-zero scores (degenerate, no error).
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise DomainError("pca_first_component needs a (T>=2, d) matrix")
    centered = matrix - matrix.mean(axis=0)
    cov = centered.T @ centered / (matrix.shape[0] - 1)
    v, lam = _power_iteration(cov)
    if lam == 0.0:
        return np.zeros(matrix.shape[0])
    return centered @ _fix_sign(v)


def pca_embed_2d(points: np.ndarray) -> tuple[np.ndarray, bool]:
    """Top-2 PCA embedding normalized to mean 0 / std 1 per axis.

    Returns (coords, degenerate); rank-1 inputs keep a zero second axis and
    are flagged degenerate.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 3 or points.shape[1] < 2:
        raise DomainError("pca_embed_2d needs >= 3 points of dimension >= 2")
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / (points.shape[0] - 1)
    v1, lam1 = _power_iteration(cov)
    if lam1 == 0.0:
        raise DomainError("pca_embed_2d needs nonzero variance")
    v1 = _fix_sign(v1)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iteration(deflated)
    coords = np.empty((points.shape[0], 2))
    coords[:, 0] = centered @ v1
    degenerate = lam2 <= 1e-12 * lam1
    if degenerate:
        coords[:, 1] = 0.0
    else:
        v2 = _fix_sign(v2 - v1 * float(v1 @ v2))
        v2 /= np.linalg.norm(v2)
        coords[:, 1] = centered @ v2
    for axis in range(2):
        std = coords[:, axis].std()
        coords[:, axis] -= coords[:, axis].mean()
        if std > 0:
            coords[:, axis] /= std
    return coords, bool(degenerate)


def separability_ratio(points, labels) -> float:
    """Mean inter-class pairwise distance over mean intra-class distance."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise DomainError("separability_ratio needs at least 2 classes")
    if counts.min() < 2:
        raise DomainError("every class needs at least 2 points")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    same = labels[:, None] == labels[None, :]
    triu = np.triu(np.ones_like(same, dtype=bool), k=1)
    intra = dist[same & triu].mean()
    inter = dist[~same & triu].mean()
    if intra == 0.0:
        return math.inf
    return float(inter / intra)


def extract_awats_pca(tensor: ReprTensor) -> SeriesMatrix:
    """Per-ROI first-principal-component scores over the run's TRs."""
    n_r, _, _ = tensor.values.shape
    rows = [pca_first_component(tensor.values[r].astype(np.float64)) for r in range(n_r)]
    return SeriesMatrix(values=np.stack(rows), kind="AWATS_PCA")


def metrics_to_csv(reports: list[MetricsReport], path) -> None:
    """One row per repetition plus a mean and a std summary row."""
    rows = np.array(
        [[r.accuracy, r.precision, r.recall, r.f1] for r in reports], dtype=np.float64
    )
    with open(path, "w", newline="") as fh:
        fh.write("repetition,accuracy,precision,recall,f1\n")
        for i, row in enumerate(rows):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        fh.write("mean," + ",".join(repr(float(v)) for v in rows.mean(axis=0)) + "\n")
        fh.write("std," + ",".join(repr(float(v)) for v in rows.std(axis=0, ddof=1 if len(rows) > 1 else 0)) + "\n")
