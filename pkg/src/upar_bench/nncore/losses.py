"""Label smoothing and the class-balanced sigmoid cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import AttributeStats
from .model import sigmoid


@dataclass
class SmoothingConfig:
    """Smoothing strength; must stay below the 0.5 decision midpoint."""

    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.alpha < 0.5:
            raise ValueError("alpha must lie in [0, 0.5)")


def smooth_labels(y: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Smoothed targets (1 - alpha) * y + alpha * (1 - y)."""
    y = np.asarray(y, dtype=np.float64)
    return (1.0 - cfg.alpha) * y + cfg.alpha * (1.0 - y)


@dataclass
class LossWeights:
    """Per-attribute weights for positive and negative samples."""

    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        self.positive = np.asarray(self.positive, dtype=np.float64)
        self.negative = np.asarray(self.negative, dtype=np.float64)
        if self.positive.shape != self.negative.shape:
            raise ValueError("positive/negative weight shapes must match")
        for arr in (self.positive, self.negative):
            if not np.isfinite(arr).all() or (arr <= 0).any():
                raise ValueError("loss weights must be strictly positive and finite")


def loss_weights_from_stats(stats: AttributeStats) -> LossWeights:
    """Rarity weighting from training positive ratios r: exp(1 - r) for
    positives, exp(r) for negatives, so rare attributes count more."""
    r = np.asarray(stats.positive_ratio, dtype=np.float64)
    return LossWeights(np.exp(1.0 - r), np.exp(r))


def unit_weights(n_attributes: int) -> LossWeights:
    return LossWeights(np.ones(n_attributes), np.ones(n_attributes))


def weighted_bce(
    logits: np.ndarray,
    targets: np.ndarray,
    weights: LossWeights,
    mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Masked, weighted sigmoid cross-entropy with its analytic gradient.

    The per-element weight is keyed by the hard (un-smoothed) label, recovered
    from the target side of the 0.5 midpoint, which smoothing never crosses.
    Loss is normalized by N times the number of active attributes; the
    returned gradient is w.r.t. the logits and zero on masked-out columns.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape != targets.shape:
        raise ValueError("logits and targets must have the same shape")
    if mask.shape != (logits.shape[1],):
        raise ValueError("mask length must equal attribute count")
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite logits")
    n, _ = logits.shape
    n_active = int(mask.sum())
    if n == 0 or n_active == 0:
        raise ValueError("need at least one row and one active attribute")

    x = logits[:, mask]
    t = targets[:, mask]
    w = np.where(t > 0.5, weights.positive[mask], weights.negative[mask])
    norm = n * n_active

    log_sig = -np.logaddexp(0.0, -x)  # log sigmoid(x)
    log_one_minus = -np.logaddexp(0.0, x)  # log (1 - sigmoid(x))
    loss = -(w * (t * log_sig + (1.0 - t) * log_one_minus)).sum() / norm

    grad = np.zeros_like(logits)
    grad[:, mask] = w * (sigmoid(x) - t) / norm
    return float(loss), grad
