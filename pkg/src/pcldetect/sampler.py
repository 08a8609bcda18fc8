"""Weighted random sampling that oversamples the minority class.

Each example is drawn with probability proportional to 1/sqrt(kappa) of its
class ratio, so an epoch of draws (with replacement, epoch length equal to
the training-set length) sees the positive class at rate
sqrt(kappa_p) / (sqrt(kappa_p) + sqrt(kappa_n)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateDistributionError


@dataclass(frozen=True)
class SampleWeights:
    """Per-example draw weights plus the class ratios they came from."""

    weights: np.ndarray
    kappa_pos: float
    kappa_neg: float


def class_ratios(binary_labels) -> tuple[float, float]:
    """(positive fraction, negative fraction) of a 0/1 label vector."""
    labels = np.asarray(binary_labels)
    total = labels.size
    if total == 0:
        raise DegenerateDistributionError("empty label vector")
    pos = int(np.count_nonzero(labels))
    if pos == 0 or pos == total:
        raise DegenerateDistributionError(
            f"need both classes present, got {pos} positives of {total}"
        )
    kappa_pos = pos / total
    return kappa_pos, 1.0 - kappa_pos


def wrs_weights(binary_labels) -> SampleWeights:
    """Assign 1/sqrt(kappa_p) to positives and 1/sqrt(kappa_n) to negatives."""
    labels = np.asarray(binary_labels)
    kappa_pos, kappa_neg = class_ratios(labels)
    weights = np.where(labels != 0, 1.0 / math.sqrt(kappa_pos), 1.0 / math.sqrt(kappa_neg))
    return SampleWeights(weights, kappa_pos, kappa_neg)


def draw_epoch(weights, n: int, rng_seed) -> np.ndarray:
    """Draw n indices independently with replacement, P(i) = w_i / sum(w).

    `weights` may be a SampleWeights or any positive weight array; the draw
    is a pure function of (weights, n, rng_seed).
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if n < 1:
        raise ContractError("epoch length must be at least 1")
    if w.ndim != 1 or w.size == 0:
        raise ContractError("weights must be a non-empty vector")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ContractError("weights must be positive and finite")
    rng = np.random.default_rng(rng_seed)
    return rng.choice(w.size, size=n, replace=True, p=w / w.sum())
