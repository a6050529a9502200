"""Forward-pass feature augmentation operators.

All operators act per sample on the input features of one layer and reduce
to an elementwise multiplier, so the training engine can replay them exactly
in the backward pass. Relevance inputs are expected in their normalized form
(signed in [-1, 1] or absolute in [0, 1], see attribution.normalize_*).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .attribution import normalize_abs

MULTIPLICATIVE = "multiplicative"
BINARY = "binary"


@dataclass
class FeatureMask:
    """Elementwise feature multiplier; binary masks carry only 0/1 entries."""

    values: np.ndarray
    mode: str = MULTIPLICATIVE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mode not in (MULTIPLICATIVE, BINARY):
            raise ConfigError(f"unknown mask mode {self.mode!r}")
        if self.mode == BINARY and not np.isin(self.values, (0.0, 1.0)).all():
            raise ConfigError("binary masks may only contain 0 and 1")


def attention_mask(r_signed_norm) -> FeatureMask:
    """Attention weighting M = 0.5 + (r' + 1)/2, so M lies in [0.5, 1.5].

    Neutral relevance (0) maps to 1.0 and leaves the feature unchanged.
    """
    r = np.asarray(r_signed_norm, dtype=np.float64)
    if np.any(np.abs(r) > 1.0 + 1e-12):
        raise ConfigError("attention_mask expects signed-normalized relevance in [-1, 1]")
    r = np.clip(r, -1.0, 1.0)
    return FeatureMask(0.5 + (r + 1.0) / 2.0, MULTIPLICATIVE)


def lrp_weighted_features(features, r_signed_norm) -> np.ndarray:
    """Relevance weighting f' = (1 + r') * f."""
    f = np.asarray(features, dtype=np.float64)
    r = np.asarray(r_signed_norm, dtype=np.float64)
    if f.shape != r.shape:
        raise ShapeError(f"features {f.shape} and relevance {r.shape} must match")
    if np.any(np.abs(r) > 1.0 + 1e-12):
        raise ConfigError("lrp_weighted_features expects relevance in [-1, 1]")
    return (1.0 + np.clip(r, -1.0, 1.0)) * f


def apply_mask(features, mask: FeatureMask) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.shape != mask.values.shape:
        raise ShapeError(f"features {f.shape} and mask {mask.values.shape} must match")
    return f * mask.values


def _drop_count(rate, n):
    # round-to-nearest with halves up, so e.g. 25% of 4 units drops 1 unit
    return int(np.floor(rate * n + 0.5))


def _rank_desc(values):
    # indices sorted by descending value, ties resolved to the lowest index
    return np.argsort(-values, axis=-1, kind="stable")


def binary_relevance_mask(r, fraction, mode) -> FeatureMask:
    """Zero exactly round(fraction*n) coordinates per sample.

    ``mode`` selects whether the most or the least relevant coordinates (by
    per-sample absolute normalized relevance) are zeroed.
    """
    if mode not in ("zero_most_relevant", "zero_least_relevant"):
        raise ConfigError(f"unknown mode {mode!r}")
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("fraction must lie in [0, 1]")
    scores = normalize_abs(r)
    single = scores.ndim == 1
    scores = np.atleast_2d(scores)
    n = scores.shape[-1]
    k = _drop_count(fraction, n)
    mask = np.ones_like(scores)
    if k > 0:
        order = _rank_desc(scores) if mode == "zero_most_relevant" else _rank_desc(-scores)
        rows = np.arange(scores.shape[0])[:, None]
        mask[rows, order[:, :k]] = 0.0
    return FeatureMask(mask[0] if single else mask, BINARY)


def _dropout_multiplier(features, drop_sets):
    """Multiplier with 0 at dropped coordinates and a per-sample survivor
    scale chosen so the activation sum is preserved (no rescale when the
    survivor sum is zero)."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    keep = np.ones_like(f)
    rows = np.arange(f.shape[0])[:, None]
    if drop_sets.shape[1] > 0:
        keep[rows, drop_sets] = 0.0
    before = f.sum(axis=1, keepdims=True)
    after = (f * keep).sum(axis=1, keepdims=True)
    scale = np.divide(before, after, out=np.ones_like(before), where=after != 0)
    return keep * scale


def xai_dropout_mask(features, r_abs_norm, rate) -> FeatureMask:
    """Multiplier mask dropping the round(rate*n) most relevant coordinates
    per sample, with survivors rescaled to preserve the activation sum.

    The ranking is deterministic; ties resolve to the lowest index.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout rate must lie in [0, 1)")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    r = np.atleast_2d(np.asarray(r_abs_norm, dtype=np.float64))
    if r.shape != f.shape:
        raise ShapeError(f"features {f.shape} and relevance {r.shape} must match")
    k = _drop_count(rate, f.shape[1])
    drop = _rank_desc(r)[:, :k]
    return FeatureMask(_dropout_multiplier(f, drop), MULTIPLICATIVE)


def random_dropout_mask(features, rate, rng) -> FeatureMask:
    """Multiplier mask dropping round(rate*n) uniformly chosen coordinates
    per sample, with the same survivor rescaling as xai_dropout_mask."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout rate must lie in [0, 1)")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = f.shape[1]
    k = _drop_count(rate, n)
    drop = np.stack([rng.permutation(n)[:k] for _ in range(f.shape[0])]) \
        if k > 0 else np.empty((f.shape[0], 0), dtype=np.intp)
    return FeatureMask(_dropout_multiplier(f, drop), MULTIPLICATIVE)


def xai_guided_dropout(features, r_abs_norm, rate, rng=None) -> np.ndarray:
    """Drop the most relevant coordinates and rescale the survivors.

    ``rng`` is accepted only for signature parity with random_dropout; the
    selection itself is deterministic.
    """
    del rng
    f = np.asarray(features, dtype=np.float64)
    mask = xai_dropout_mask(f, r_abs_norm, rate)
    out = np.atleast_2d(f) * mask.values
    return out[0] if f.ndim == 1 else out


def random_dropout(features, rate, rng) -> np.ndarray:
    """Drop uniformly chosen coordinates and rescale the survivors."""
    f = np.asarray(features, dtype=np.float64)
    mask = random_dropout_mask(f, rate, rng)
    out = np.atleast_2d(f) * mask.values
    return out[0] if f.ndim == 1 else out
