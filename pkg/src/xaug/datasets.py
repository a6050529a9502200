"""Deterministic toy dataset generators.

Three two-class problems at desk scale plus a class-imbalanced variant:

* toy1: two informative dimensions arranged as two Gaussian clusters per
  class (an XOR layout, so not linearly separable), three standard-normal
  noise dimensions, 10% of labels reassigned at random.
* toy2: three informative Gaussian dimensions plus a distractor dimension
  whose sign encodes the class in the training split but is random in the
  test split; 5% label noise.
* toy3: separable along dimension 0; dimension 1 spreads over a class-signed
  interval in the training split and is pinned to the interval midpoint in
  the test split.
* imbalanced: single Gaussian cluster per class with caller-chosen per-class
  counts, toy1-style noise dimensions.

Cluster geometry is configurable; the defaults are chosen so that small
dense baselines land in the 70-90% test accuracy range and leave headroom
for the augmentation operators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

TRAIN = "train"
TEST = "test"


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = TRAIN

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DataError("features must be a nonempty N x D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must have one entry per sample")
        if not np.isfinite(self.features).all():
            raise DataError("features must be finite")
        if self.labels.min() < 0:
            raise DataError("labels must be non-negative class indices")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_dims(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1


_LABEL_NOISE_STREAM = 0x1ABE1


def _assign_random_labels(labels, fraction, n_classes, seed):
    """Reassign exactly round(fraction * n) labels to uniform random classes.

    The draws come from a substream derived from ``seed``, so generations of
    the same seed with different noise fractions share identical features and
    sample order and differ only in the reassigned labels.
    """
    y = labels.copy()
    count = int(np.floor(fraction * y.shape[0] + 0.5))
    if count > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([seed, _LABEL_NOISE_STREAM]))
        idx = noise_rng.choice(y.shape[0], size=count, replace=False)
        y[idx] = noise_rng.integers(0, n_classes, size=count)
    return y


def gen_toy1(seed, n_total=400, n_test=50, cluster_mean=1.5, cluster_std=0.55,
             noise_dims=3, noise_std=1.0, label_noise=0.10):
    """Two informative XOR-arranged dimensions plus noise dimensions.

    Returns (train, test) with the stated sizes; by default 350 train and 50
    test rows of 5 features.
    """
    rng = np.random.default_rng(seed)
    half = n_total // 2
    labels = np.repeat([0, 1], [half, n_total - half])
    # two clusters per class, opposite corners: class 0 on the main diagonal,
    # class 1 on the anti-diagonal
    corner = rng.integers(0, 2, size=n_total)
    sign0 = np.where(corner == 0, 1.0, -1.0)
    sign1 = np.where(labels == 0, sign0, -sign0)
    centers = np.stack([sign0 * cluster_mean, sign1 * cluster_mean], axis=1)
    informative = centers + rng.normal(0.0, cluster_std, size=(n_total, 2))
    noise = rng.normal(0.0, noise_std, size=(n_total, noise_dims))
    features = np.concatenate([informative, noise], axis=1)
    labels = _assign_random_labels(labels, label_noise, 2, seed)
    order = rng.permutation(n_total)
    features, labels = features[order], labels[order]
    cut = n_total - n_test
    return (
        LabeledDataset(features[:cut], labels[:cut], TRAIN),
        LabeledDataset(features[cut:], labels[cut:], TEST),
    )


def gen_toy2(seed, n_total=400, n_test=50, mean=0.8, std=1.0, label_noise=0.05):
    """Three informative dimensions plus a sign-coded distractor dimension.

    In the training split the distractor's sign equals the (pre-noise) class
    sign; in the test split the sign is random.
    """
    rng = np.random.default_rng(seed)
    half = n_total // 2
    labels = np.repeat([0, 1], [half, n_total - half])
    class_sign = np.where(labels == 1, 1.0, -1.0)
    informative = class_sign[:, None] * mean + rng.normal(0.0, std, size=(n_total, 3))
    magnitude = np.abs(rng.normal(0.0, 1.0, size=n_total))
    distractor = class_sign * magnitude
    features = np.concatenate([informative, distractor[:, None]], axis=1)
    labels = _assign_random_labels(labels, label_noise, 2, seed)
    order = rng.permutation(n_total)
    features, labels = features[order], labels[order]
    cut = n_total - n_test
    train = LabeledDataset(features[:cut], labels[:cut], TRAIN)
    test_features = features[cut:].copy()
    random_sign = np.where(rng.integers(0, 2, size=n_test) == 1, 1.0, -1.0)
    test_features[:, 3] = random_sign * np.abs(test_features[:, 3])
    return train, LabeledDataset(test_features, labels[cut:], TEST)


def gen_toy3(seed, n_per_split=200, dim0_mean=1.0, dim0_std=0.6,
             dim1_split=1.0, dim1_total=4.0):
    """Separable along dimension 0; dimension 1 is a training-only shortcut.

    In the training split dimension 1 is uniform over class-specific,
    adjacent sub-intervals of [0, dim1_total] (class 0 below ``dim1_split``,
    class 1 above), so it separates the classes there. The test split pins
    dimension 1 to the midpoint of the overall interval. The sub-intervals
    are asymmetric, so the midpoint lies inside class 1's band and a model
    leaning on dimension 1 systematically misreads class-0 test samples.
    """
    rng = np.random.default_rng(seed)
    midpoint = dim1_total / 2.0

    def split(pin_dim1):
        half = n_per_split // 2
        labels = np.repeat([0, 1], [half, n_per_split - half])
        sign = np.where(labels == 1, 1.0, -1.0)
        dim0 = sign * dim0_mean + rng.normal(0.0, dim0_std, size=n_per_split)
        if pin_dim1:
            dim1 = np.full(n_per_split, midpoint)
        else:
            lo = np.where(labels == 1, dim1_split, 0.0)
            hi = np.where(labels == 1, dim1_total, dim1_split)
            dim1 = rng.uniform(lo, hi)
        features = np.stack([dim0, dim1], axis=1)
        order = rng.permutation(n_per_split)
        return features[order], labels[order]

    train_x, train_y = split(pin_dim1=False)
    test_x, test_y = split(pin_dim1=True)
    return (
        LabeledDataset(train_x, train_y, TRAIN),
        LabeledDataset(test_x, test_y, TEST),
    )


def gen_imbalanced(seed, class_counts, cluster_mean=1.5, cluster_std=0.5,
                   noise_dims=3, noise_std=1.0, split=TRAIN):
    """Single Gaussian cluster per class with explicit per-class counts.

    Class centers sit on a circle of radius ``cluster_mean * sqrt(2)`` in the
    two informative dimensions, so per-class means stay separated by well
    over two cluster standard deviations at the defaults.
    """
    counts = [int(c) for c in class_counts]
    if any(c <= 0 for c in counts):
        raise ConfigError("every class count must be positive")
    rng = np.random.default_rng(seed)
    n_classes = len(counts)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes + np.pi / 4.0
    radius = cluster_mean * np.sqrt(2.0)
    blocks, labels = [], []
    for c, count in enumerate(counts):
        center = radius * np.array([np.cos(angles[c]), np.sin(angles[c])])
        informative = center + rng.normal(0.0, cluster_std, size=(count, 2))
        noise = rng.normal(0.0, noise_std, size=(count, noise_dims))
        blocks.append(np.concatenate([informative, noise], axis=1))
        labels.append(np.full(count, c, dtype=np.intp))
    features = np.concatenate(blocks)
    y = np.concatenate(labels)
    order = rng.permutation(features.shape[0])
    return LabeledDataset(features[order], y[order], split)


GENERATORS = {
    "toy1": gen_toy1,
    "toy2": gen_toy2,
    "toy3": gen_toy3,
}


def dataset_to_csv(dataset: LabeledDataset, path):
    """CSV with header dim_0..dim_{D-1},label,split."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"dim_{j}" for j in range(dataset.n_dims)] + ["label", "split"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label), dataset.split])


def dataset_from_csv(path) -> LabeledDataset:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["label", "split"]:
            raise DataError(f"{path}: expected trailing label,split columns")
        n_dims = len(header) - 2
        rows, labels, splits = [], [], set()
        for rec in reader:
            rows.append([float(v) for v in rec[:n_dims]])
            labels.append(int(rec[n_dims]))
            splits.add(rec[n_dims + 1])
    if not rows:
        raise DataError(f"{path}: no data rows")
    split = splits.pop() if len(splits) == 1 else "mixed"
    return LabeledDataset(np.array(rows), np.array(labels), split)
