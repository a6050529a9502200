"""Data redistribution for imbalanced training.

Scalar metrics are computed from a small set of representative attribution
maps per class, turned into class proportions via softmax, and used to
resample fixed-size mini-epochs. A balance score (mean class performance
over its population standard deviation) tracks how equally classes are
treated.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError, UsageError

ENTROPY = "entropy"
MSE_DISTANCE = "mse_distance"
INVERSE_FREQUENCY = "inverse_frequency"
METRIC_KINDS = (ENTROPY, MSE_DISTANCE, INVERSE_FREQUENCY)

HIGHER_MORE = "higher_more"    # larger metric -> larger sample share
HIGHER_FEWER = "higher_fewer"

HISTORY_LENGTH = 5


@dataclass
class ClassMetricTable:
    """One finite scalar per class plus the metric kind that produced it."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in METRIC_KINDS:
            raise ConfigError(f"unknown metric kind {self.kind!r}")
        if not np.isfinite(self.values).all():
            raise DataError("class metrics must be finite")


def attribution_entropy(r) -> float:
    """Shannon entropy (natural log) of |r| normalized to a distribution.

    An all-zero map is defined to have entropy 0.
    """
    a = np.abs(np.asarray(r, dtype=np.float64)).ravel()
    total = a.sum()
    if total == 0:
        return 0.0
    p = a / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def attribution_mse_distance(r_now, r_prev) -> float:
    """Mean squared elementwise difference between two attribution maps."""
    a = np.asarray(r_now, dtype=np.float64)
    b = np.asarray(r_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"maps {a.shape} and {b.shape} must match")
    return float(np.mean((a - b) ** 2))


def class_proportions(metrics, orientation=HIGHER_MORE) -> np.ndarray:
    """Softmax of the class metrics; all proportions positive, summing to 1.

    ``orientation`` controls whether a larger metric should receive a larger
    or a smaller share of samples.
    """
    if isinstance(metrics, ClassMetricTable):
        values = metrics.values
    else:
        values = np.asarray(metrics, dtype=np.float64)
    if orientation not in (HIGHER_MORE, HIGHER_FEWER):
        raise ConfigError(f"unknown orientation {orientation!r}")
    v = values if orientation == HIGHER_MORE else -values
    v = v - v.max()
    e = np.exp(v)
    return e / e.sum()


def largest_remainder_counts(proportions, size) -> np.ndarray:
    """Apportion ``size`` draws to classes, counts summing exactly to size."""
    p = np.asarray(proportions, dtype=np.float64)
    quota = p * size
    counts = np.floor(quota).astype(np.intp)
    short = size - counts.sum()
    if short > 0:
        remainders = quota - counts
        # ties resolve to the lowest class index
        order = np.argsort(-remainders, kind="stable")
        counts[order[:short]] += 1
    return counts


def resample_miniepoch(labels, proportions, size, rng) -> np.ndarray:
    """Draw a mini-epoch of exactly ``size`` sample indices.

    Per-class counts follow the largest-remainder apportionment of
    size * p_c. Within a class, draws are uniform without replacement, and
    with replacement once a class is exhausted.
    """
    y = np.asarray(labels)
    p = np.asarray(proportions, dtype=np.float64)
    counts = largest_remainder_counts(p, size)
    picked = []
    for c, count in enumerate(counts):
        if count == 0:
            continue
        pool = np.flatnonzero(y == c)
        if pool.size == 0:
            raise DataError(f"class {c} has proportion {p[c]:g} but no samples")
        replace = count > pool.size
        picked.append(rng.choice(pool, size=count, replace=replace))
    idx = np.concatenate(picked) if picked else np.empty(0, dtype=np.intp)
    rng.shuffle(idx)
    return idx


PERFECTLY_BALANCED = None


def balance_score(classwise_perf):
    """Mean class performance divided by its population standard deviation.

    Returns None (the distinguished perfectly-balanced outcome) when the
    standard deviation is zero.
    """
    perf = np.asarray(classwise_perf, dtype=np.float64)
    if perf.size < 2:
        raise UsageError("balance score needs at least two classes")
    mu = perf.mean()
    sigma = perf.std()
    # rounding noise of identical entries must still count as balanced
    if sigma <= 1e-12 * max(1.0, abs(mu)):
        return PERFECTLY_BALANCED
    return float(mu / sigma)


@dataclass
class RepresentativeSet:
    """Fixed per-class sample indices with a short attribution history.

    The indices are drawn once and stay constant over training; the history
    ring keeps the attribution maps of at most the last HISTORY_LENGTH
    mini-epochs for smoothing.
    """

    indices: np.ndarray
    labels: np.ndarray
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LENGTH))

    @classmethod
    def select(cls, labels, per_class, rng):
        y = np.asarray(labels)
        picked = []
        for c in np.unique(y):
            pool = np.flatnonzero(y == c)
            if pool.size == 0:
                raise DataError(f"class {c} has no samples to represent")
            take = min(per_class, pool.size)
            picked.append(rng.choice(pool, size=take, replace=False))
        idx = np.concatenate(picked)
        return cls(indices=idx, labels=y[idx])

    def push(self, attributions):
        arr = np.asarray(attributions, dtype=np.float64)
        if arr.shape[0] != self.indices.shape[0]:
            raise ShapeError("attribution rows must match the representative set")
        self.history.append(arr)

    def averaged(self) -> np.ndarray | None:
        """Mean attribution map over the stored history, or None if empty."""
        if not self.history:
            return None
        return np.mean(np.stack(self.history), axis=0)

    def classwise_mean(self, per_sample_values) -> dict[int, float]:
        values = np.asarray(per_sample_values, dtype=np.float64)
        return {
            int(c): float(values[self.labels == c].mean())
            for c in np.unique(self.labels)
        }
