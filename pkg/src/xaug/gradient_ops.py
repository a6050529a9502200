"""Backward-pass augmentation: importance-masked feature gradients and
importance-scaled parameter updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateImportanceError, ShapeError


@dataclass
class WeightImportance:
    """Per-weight importance for one layer, shaped like that layer's weights.

    In normalized form all entries are >= 0 and sum to 1.
    """

    values: np.ndarray
    normalized: bool = True


def mask_feature_gradient(grad, mask, lam) -> np.ndarray:
    """grad' = grad + lam * (grad * mask); linear in grad, identity at lam=0."""
    g = np.asarray(grad, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if g.shape != m.shape:
        raise ShapeError(f"gradient {g.shape} and mask {m.shape} must match")
    return g + lam * (g * m)


def weight_importance_scores(r_in, r_out) -> WeightImportance:
    """Weight importance from the relevance vectors flanking a dense layer.

    ``r_in`` is the relevance at the layer's input (length in_units), and
    ``r_out`` at its output, i.e. the input of the next layer (length
    out_units). The outer product of their absolute values is normalized by
    its sum; absolute values are taken first so the normalized scores stay in
    [0, 1]. An all-zero product raises DegenerateImportanceError so callers
    can fall back to uniform importance.
    """
    a = np.abs(np.asarray(r_in, dtype=np.float64)).ravel()
    b = np.abs(np.asarray(r_out, dtype=np.float64)).ravel()
    raw = np.outer(b, a)
    total = raw.sum()
    if total == 0:
        raise DegenerateImportanceError("all-zero relevance outer product")
    return WeightImportance(raw / total, normalized=True)


def uniform_importance(shape) -> WeightImportance:
    values = np.full(shape, 1.0 / np.prod(shape))
    return WeightImportance(values, normalized=True)


def scaled_weight_update(weights, grad, importance: WeightImportance, learning_rate) -> np.ndarray:
    """theta' = theta - lr * (grad * importance); zero-importance weights stay frozen."""
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if w.shape != g.shape or w.shape != importance.values.shape:
        raise ShapeError("weights, gradient, and importance must share one shape")
    return w - learning_rate * (g * importance.values)
