"""Detection-difficulty cost-sensitive losses with analytic gradients.

Per-category hardness mixes the category's share of boxes in the mini-batch
with its share of mean box size (height + width). Weights are a softmax over
negative hardness, so rare and small categories get more weight. The weights
scale both a per-category smooth-L1 regression loss and a cross-entropy.

Categories absent from the batch are marked with ``nan`` hardness and receive
weight zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DEFAULT_LAMBDA = 0.5
DEFAULT_BETA = 1.0


@dataclass(frozen=True)
class HardnessParams:
    lam: float = DEFAULT_LAMBDA
    alpha: Optional[tuple[float, ...]] = None
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    def alpha_array(self, n_categories: int) -> np.ndarray:
        if self.alpha is None:
            return np.zeros(n_categories)
        if len(self.alpha) != n_categories:
            raise ValueError(f"alpha has {len(self.alpha)} entries, expected {n_categories}")
        return np.asarray(self.alpha, dtype=float)


@dataclass(frozen=True)
class BatchClassStats:
    """Per-category box counts and mean box sizes in one mini-batch."""

    counts: np.ndarray
    mean_sizes: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=float)
        sizes = np.asarray(self.mean_sizes, dtype=float)
        if counts.shape != sizes.shape or counts.ndim != 1:
            raise ValueError("counts and mean_sizes must be 1-D arrays of equal length")
        if np.any(counts < 0) or np.any(sizes[counts > 0] < 0):
            raise ValueError("counts and sizes must be non-negative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "mean_sizes", np.where(counts > 0, sizes, np.nan))

    @property
    def n_categories(self) -> int:
        return len(self.counts)

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    @classmethod
    def from_boxes(
        cls,
        categories: Sequence[int],
        widths: Sequence[float],
        heights: Sequence[float],
        n_categories: int = 4,
    ) -> "BatchClassStats":
        cats = np.asarray(categories, dtype=int)
        sizes = np.asarray(widths, dtype=float) + np.asarray(heights, dtype=float)
        if cats.size and (cats.min() < 0 or cats.max() >= n_categories):
            raise ValueError("category index out of range")
        counts = np.bincount(cats, minlength=n_categories).astype(float)
        totals = np.zeros(n_categories)
        # sequential accumulation keeps the reduction order fixed
        for c, s in zip(cats.tolist(), sizes.tolist()):
            totals[c] += s
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, totals / counts, np.nan)
        return cls(counts, means)


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite non-negative vector")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return len(self.w)

    @classmethod
    def uniform(cls, n_categories: int) -> "ClassWeights":
        return cls(np.full(n_categories, 1.0 / n_categories))


def smooth_l1(x, beta: float = DEFAULT_BETA):
    """x²/(2β) inside (-β, β), |x| - β/2 outside. Works elementwise on arrays."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)
    return out if out.ndim else float(out)


def smooth_l1_grad(x, beta: float = DEFAULT_BETA):
    # At |x| == beta the quadratic-branch derivative x/beta is used; it equals sign(x) there.
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) <= beta, x / beta, np.sign(x))
    return out if out.ndim else float(out)


def class_hardness(stats: BatchClassStats, params: HardnessParams = HardnessParams()) -> np.ndarray:
    """Hardness per category; ``nan`` for categories with no boxes in the batch.

    l_i = (1 - λ)·m_i/Σm + λ·n_i/Σn + α_i over present categories. If every
    present category has mean size 0 the size share is taken as uniform.
    """
    present = stats.present
    n_present = int(present.sum())
    if n_present == 0:
        raise ValueError("no category has boxes in this batch")
    alpha = params.alpha_array(stats.n_categories)
    counts = stats.counts[present]
    sizes = stats.mean_sizes[present]
    count_share = counts / counts.sum()
    size_total = sizes.sum()
    if size_total > 0:
        size_share = sizes / size_total
    else:
        size_share = np.full(n_present, 1.0 / n_present)
    out = np.full(stats.n_categories, np.nan)
    out[present] = (1.0 - params.lam) * count_share + params.lam * size_share + alpha[present]
    return out


def class_weights(hardness: Sequence[float]) -> ClassWeights:
    """Softmax of negative hardness over present (non-nan) categories."""
    l = np.asarray(hardness, dtype=float)
    present = ~np.isnan(l)
    if not present.any():
        raise ValueError("no present category")
    if np.any(np.isinf(l[present])):
        raise ValueError("hardness must be finite")
    z = -l[present]
    e = np.exp(z - z.max())
    w = np.zeros(len(l))
    w[present] = e / e.sum()
    return ClassWeights(w)


def _residual_arrays(residuals, weights: ClassWeights) -> list[np.ndarray]:
    arrays = [np.asarray(r, dtype=float).ravel() for r in residuals]
    if len(arrays) != len(weights):
        raise ValueError(f"got residuals for {len(arrays)} categories, weights cover {len(weights)}")
    for i, r in enumerate(arrays):
        if r.size and weights.w[i] == 0.0:
            raise ValueError(f"category {i} has residuals but no weight")
    return arrays


def cost_sensitive_l1(residuals, weights: ClassWeights, beta: float = DEFAULT_BETA) -> float:
    """Σ_i w_i · mean smooth-L1 over category i's residual components.

    ``residuals[i]`` is any array-like of the regression residuals of
    category ``i`` (e.g. shape (boxes, 4)); empty for categories without boxes.
    """
    total = 0.0
    for w, r in zip(weights.w, _residual_arrays(residuals, weights)):
        if r.size:
            total += w * float(np.sum(smooth_l1(r, beta))) / r.size
    return total


def cost_sensitive_l1_grad(residuals, weights: ClassWeights, beta: float = DEFAULT_BETA) -> list[np.ndarray]:
    """d L_c / d residual, shaped like each category's input."""
    _residual_arrays(residuals, weights)
    grads = []
    for w, raw in zip(weights.w, residuals):
        r = np.asarray(raw, dtype=float)
        if r.size == 0:
            grads.append(np.zeros_like(r))
            continue
        grads.append(w * np.asarray(smooth_l1_grad(r, beta)) / r.size)
    return grads


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_ce_inputs(logits, labels, weights: ClassWeights) -> tuple[np.ndarray, np.ndarray]:
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.asarray(labels)
    if z.shape[1] != len(weights):
        raise ValueError(f"logits have {z.shape[1]} classes, weights cover {len(weights)}")
    if y.shape != (z.shape[0],):
        raise ValueError("need exactly one label per sample")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError(f"invalid label index in {y.tolist()}")
    return z, y.astype(int)


def weighted_cross_entropy(logits, labels, weights: ClassWeights) -> float:
    """Mean over samples of w[label] · -log softmax(logits)[label]."""
    z, y = _check_ce_inputs(logits, labels, weights)
    if len(y) == 0:
        return 0.0
    nll = -_log_softmax(z)[np.arange(len(y)), y]
    return float(np.mean(weights.w[y] * nll))


def weighted_cross_entropy_grad(logits, labels, weights: ClassWeights) -> np.ndarray:
    """d CE / d logits, shape (samples, classes)."""
    z, y = _check_ce_inputs(logits, labels, weights)
    if len(y) == 0:
        return np.zeros_like(z)
    p = np.exp(_log_softmax(z))
    p[np.arange(len(y)), y] -= 1.0
    return p * (weights.w[y] / len(y))[:, None]


def loss_gradients(residuals, logits, labels, weights: ClassWeights, beta: float = DEFAULT_BETA):
    """Both analytic gradients at once: (d L_c/d residuals, d CE/d logits)."""
    return (
        cost_sensitive_l1_grad(residuals, weights, beta),
        weighted_cross_entropy_grad(logits, labels, weights),
    )
