"""Seeded experiment runner.

One run trains one network on one generated dataset with exactly one
augmentation family engaged at its place in the training loop: data
resampling before batching, feature masks in the forward pass, regularizers
and scalings in the loss, masks in the backward pass, or pruning after
training. Every iteration logs train/test loss and accuracy plus the mean
normalized input attribution of the test set; runs are deterministic under
their seed.

Two independent RNG streams are derived per run: one drives training
(batch order, mini-epoch resampling), the other everything on the
augmentation/attribution side (dropout masks, representative-sample
selection). Attribution logging therefore never shifts the training
randomness.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import __version__
from . import attribution, datasets, feature_ops, gradient_ops, loss_ops, pruning, redistribution
from .errors import ConfigError, ConsistencyError, UsageError
from .network import (
    DenseNetwork,
    Gradients,
    MomentumState,
    TrainConfig,
    backward,
    build_network,
    combine_gradients,
    cross_entropy,
    evaluate,
    forward,
    per_sample_cross_entropy,
    sgd_momentum_step,
)

FAMILIES = (
    "none",
    "attention_mask",
    "lrp_weighted",
    "xai_dropout",
    "random_dropout",
    "rrr_loss",
    "attribution_prior",
    "loss_scaling",
    "grad_feature_mask",
    "grad_weight_scaling",
    "data_redistribution",
    "prune",
)

SIGNED = "signed"
ABS = "abs"

EXPERIMENTS = ("toy1", "toy2", "toy3", "equality", "custom")


@dataclass
class AugmentationSpec:
    """Selects exactly one augmentation family and its parameters.

    ``layer`` is the augmented layer index (features and gradients),
    ``rate`` the dropout rate, ``weight`` the regularizer factor (the
    lambda of the loss and gradient families), ``alpha``/``beta`` the dual
    objective weights of the lrp_weighted family.
    """

    family: str = "none"
    layer: int = 1
    rate: float = 0.25
    weight: float = 1.0
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = attribution.DEFAULT_EPSILON
    mask: tuple | None = None
    mask_semantics: str = loss_ops.RELEVANCE_MASK
    penalty: str = "l1"
    penalty_target: float = 0.0
    class_factors: tuple | None = None
    policy: str = redistribution.ENTROPY
    orientation: str = redistribution.HIGHER_MORE
    prune_fraction: float = 0.25
    fine_tune_iterations: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(
                f"unknown augmentation family {self.family!r}; valid: {', '.join(FAMILIES)}"
            )
        if self.penalty not in loss_ops.PENALTIES:
            raise ConfigError(f"unknown penalty {self.penalty!r}")
        if self.policy not in redistribution.METRIC_KINDS:
            raise ConfigError(f"unknown redistribution policy {self.policy!r}")


@dataclass
class ExperimentConfig:
    experiment: str
    layer_sizes: tuple
    activations: tuple
    train: TrainConfig
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    attribution_method: attribution.AttributionMethod = field(
        default_factory=lambda: attribution.AttributionMethod(kind=attribution.LRP)
    )
    seeds: tuple = (0, 1, 2, 3, 4)
    data: dict = field(default_factory=dict)
    attr_normalization: str = ABS
    attr_every: int = 1
    output: str | None = None
    # mini-epoch loop (equality preset and the data_redistribution family)
    mini_epochs: int = 0
    mini_epoch_size: int = 96
    mini_epoch_iterations: int = 3
    representatives_per_class: int = 5

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.attr_normalization not in (SIGNED, ABS):
            raise ConfigError("attr_normalization must be 'signed' or 'abs'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass
class MetricsLog:
    """Per-iteration records of one seeded run.

    ``attr`` holds the mean normalized input attribution of the test set per
    dimension, ``attr_smooth`` its cumulative mean over iterations 1..t.
    Equality-style runs additionally carry per-mini-epoch proportions,
    class-wise test accuracy, and the balance score (numpy.inf encodes the
    perfectly balanced sigma = 0 outcome).
    """

    seed: int
    iteration: np.ndarray
    train_loss: np.ndarray
    train_acc: np.ndarray
    test_loss: np.ndarray
    test_acc: np.ndarray
    attr: np.ndarray
    attr_smooth: np.ndarray
    mini_epoch: np.ndarray | None = None
    proportions: np.ndarray | None = None
    class_acc: np.ndarray | None = None
    balance: np.ndarray | None = None

    @property
    def n_dims(self):
        return self.attr.shape[1]

    def to_csv(self, path, attr_enabled=True):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            dims = range(self.n_dims)
            writer.writerow(
                ["iteration", "split", "loss", "accuracy"]
                + [f"attr_dim_{d}" for d in dims]
                + [f"attr_smooth_dim_{d}" for d in dims]
            )
            blank = [""] * (2 * self.n_dims)
            for i, t in enumerate(self.iteration):
                writer.writerow(
                    [int(t), "train", repr(float(self.train_loss[i])),
                     repr(float(self.train_acc[i]))] + blank
                )
                attr_cells = (
                    [repr(float(v)) for v in self.attr[i]]
                    + [repr(float(v)) for v in self.attr_smooth[i]]
                    if attr_enabled else blank
                )
                writer.writerow(
                    [int(t), "test", repr(float(self.test_loss[i])),
                     repr(float(self.test_acc[i]))] + attr_cells
                )

    def miniepochs_to_csv(self, path):
        if self.mini_epoch is None:
            raise UsageError("this log has no mini-epoch records")
        n_classes = self.proportions.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["mini_epoch"]
                + [f"p_class_{c}" for c in range(n_classes)]
                + [f"acc_class_{c}" for c in range(n_classes)]
                + ["balance_score"]
            )
            for i, m in enumerate(self.mini_epoch):
                writer.writerow(
                    [int(m)]
                    + [repr(float(v)) for v in self.proportions[i]]
                    + [repr(float(v)) for v in self.class_acc[i]]
                    + [repr(float(self.balance[i]))]
                )


# ---------------------------------------------------------------------------
# Presets: the desk-scale experiment recipes.
# ---------------------------------------------------------------------------

TOY_DEFAULT_SEEDS = (0, 1, 2, 3, 4)
EQUALITY_DEFAULT_SEEDS = (0, 1, 2)


def _preset_method():
    # epsilon composite, explained w.r.t. the true class; probability seeding
    # so that the per-sample sign of a mask tracks whether the target class
    # is currently favored (see AttributionMethod.seed_mode)
    return attribution.AttributionMethod(
        kind=attribution.LRP,
        target=attribution.TRUE_CLASS,
        seed_mode=attribution.SEED_PROBABILITY,
    )


def toy1_config(augmentation=None, seeds=TOY_DEFAULT_SEEDS, **overrides):
    aug = augmentation or AugmentationSpec(family="none")
    cfg = ExperimentConfig(
        experiment="toy1",
        layer_sizes=(5, 64, 32, 16, 2),
        activations=("relu", "relu", "relu", "softmax"),
        train=TrainConfig(iterations=500, batch_size=32, learning_rate=0.01, momentum=0.9),
        augmentation=aug,
        attribution_method=_preset_method(),
        seeds=tuple(seeds),
        data={},
        attr_normalization=SIGNED,
    )
    return replace(cfg, **overrides) if overrides else cfg


def toy2_config(augmentation=None, seeds=TOY_DEFAULT_SEEDS, **overrides):
    aug = augmentation or AugmentationSpec(family="none")
    cfg = ExperimentConfig(
        experiment="toy2",
        layer_sizes=(4, 5, 2),
        activations=("relu", "softmax"),
        train=TrainConfig(iterations=200, batch_size=50, learning_rate=0.01, momentum=0.9),
        augmentation=aug,
        attribution_method=_preset_method(),
        seeds=tuple(seeds),
        data={},
        attr_normalization=ABS,
    )
    return replace(cfg, **overrides) if overrides else cfg


def toy3_config(augmentation=None, seeds=TOY_DEFAULT_SEEDS, **overrides):
    aug = augmentation or AugmentationSpec(family="none")
    if aug.family == "rrr_loss" and aug.mask is None:
        aug = replace(aug, mask=(1, 0), layer=0)
    cfg = ExperimentConfig(
        experiment="toy3",
        layer_sizes=(2, 2),
        activations=("softmax",),
        train=TrainConfig(iterations=200, batch_size=50, learning_rate=0.001, momentum=0.9),
        augmentation=aug,
        attribution_method=_preset_method(),
        seeds=tuple(seeds),
        data={},
        attr_normalization=ABS,
    )
    return replace(cfg, **overrides) if overrides else cfg


def equality_config(augmentation=None, seeds=EQUALITY_DEFAULT_SEEDS, **overrides):
    aug = augmentation or AugmentationSpec(family="none")
    cfg = ExperimentConfig(
        experiment="equality",
        layer_sizes=(5, 16, 8, 2),
        activations=("relu", "relu", "softmax"),
        train=TrainConfig(iterations=120, batch_size=32, learning_rate=0.01, momentum=0.9),
        augmentation=aug,
        attribution_method=_preset_method(),
        seeds=tuple(seeds),
        data={"class_counts": (300, 50), "test_count_per_class": 60, "cluster_std": 1.4},
        attr_normalization=ABS,
        mini_epochs=40,
        mini_epoch_size=96,
        mini_epoch_iterations=3,
        representatives_per_class=5,
    )
    return replace(cfg, **overrides) if overrides else cfg


PRESETS = {
    "toy1": toy1_config,
    "toy2": toy2_config,
    "toy3": toy3_config,
    "equality": equality_config,
}


# ---------------------------------------------------------------------------
# Run machinery.
# ---------------------------------------------------------------------------

def _derive_seeds(run_seed):
    """Four decorrelated child seeds: data, init, training, augmentation."""
    children = np.random.SeedSequence(run_seed).spawn(4)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _make_data(config: ExperimentConfig, data_seed):
    if config.experiment in datasets.GENERATORS:
        return datasets.GENERATORS[config.experiment](data_seed, **config.data)
    if config.experiment == "equality":
        params = dict(config.data)
        counts = params.pop("class_counts", (300, 50))
        per_class = params.pop("test_count_per_class", 60)
        train = datasets.gen_imbalanced(data_seed, counts, split=datasets.TRAIN, **params)
        test = datasets.gen_imbalanced(
            data_seed + 1, [per_class] * len(counts), split=datasets.TEST, **params
        )
        return train, test
    # custom: the data dict names one of the toy generators
    params = dict(config.data)
    name = params.pop("generator", None)
    if name not in datasets.GENERATORS:
        raise ConfigError("custom experiments need data={'generator': 'toy1'|'toy2'|'toy3', ...}")
    return datasets.GENERATORS[name](data_seed, **params)


class _BatchSampler:
    """Replacement-free shuffling per epoch-equivalent."""

    def __init__(self, indices, batch_size, rng):
        self.indices = np.asarray(indices)
        self.batch_size = min(batch_size, self.indices.size)
        self.rng = rng
        self._queue = []

    def next_batch(self):
        if len(self._queue) < self.batch_size:
            self._queue = list(self.rng.permutation(self.indices))
        batch = self._queue[: self.batch_size]
        del self._queue[: self.batch_size]
        return np.asarray(batch)


def _training_method(config: ExperimentConfig) -> attribution.AttributionMethod:
    """The configured method, forced to explain the true class during training."""
    m = config.attribution_method
    return attribution.AttributionMethod(kind=m.kind, lrp_rules=m.lrp_rules,
                                         target=attribution.TRUE_CLASS,
                                         seed_mode=m.seed_mode)


def _epsilon_method(net: DenseNetwork, epsilon) -> attribution.AttributionMethod:
    rules = {l: attribution.LrpRule("epsilon", epsilon) for l in range(net.layer_count)}
    return attribution.AttributionMethod(kind=attribution.LRP, lrp_rules=rules,
                                         target=attribution.TRUE_CLASS)


def _step_gradients(net, x, y, spec: AugmentationSpec, method, aug_rng):
    """Loss and parameter gradients for one batch under one family."""
    family = spec.family
    if family in ("none", "data_redistribution", "prune"):
        trace = forward(net, x)
        return cross_entropy(trace.output, y), backward(net, trace, y)

    if family in ("attention_mask", "lrp_weighted", "xai_dropout", "random_dropout"):
        trace0 = forward(net, x)
        feats = trace0.inputs[spec.layer]
        if family == "random_dropout":
            mask = feature_ops.random_dropout_mask(feats, spec.rate, aug_rng).values
        else:
            maps = attribution.explain(net, trace0, y, method)
            rel = maps.layers[spec.layer]
            if family == "attention_mask":
                mask = feature_ops.attention_mask(attribution.normalize_signed(rel)).values
            elif family == "lrp_weighted":
                mask = 1.0 + attribution.normalize_signed(rel)
            else:
                mask = feature_ops.xai_dropout_mask(
                    feats, attribution.normalize_abs(rel), spec.rate
                ).values
        trace1 = forward(net, x, feature_mask=(spec.layer, mask))
        loss_masked = cross_entropy(trace1.output, y)
        if family in ("attention_mask", "lrp_weighted") and spec.alpha > 0:
            # dual objective: the plain branch keeps the model aligned with
            # unmasked inference, the masked branch carries the guidance
            loss0 = cross_entropy(trace0.output, y)
            grads = combine_gradients(
                backward(net, trace0, y), backward(net, trace1, y), spec.alpha, spec.beta
            )
            return loss_ops.dual_objective(loss0, loss_masked, spec.alpha, spec.beta), grads
        return loss_masked, backward(net, trace1, y)

    if family == "rrr_loss":
        trace = forward(net, x)
        grads = backward(net, trace, y)
        mask = loss_ops.GroundTruthMask(np.asarray(spec.mask, dtype=np.float64),
                                        spec.mask_semantics)
        reason, bw, bb = loss_ops.reason_loss_with_param_grad(
            net, trace, y, mask, layer=spec.layer, epsilon=spec.epsilon
        )
        total = cross_entropy(trace.output, y) + spec.weight * reason
        grads = Gradients(
            [g + spec.weight * d for g, d in zip(grads.weight_grads, bw)],
            [g + spec.weight * d for g, d in zip(grads.bias_grads, bb)],
            grads.feature_grads,
        )
        return total, grads

    if family == "attribution_prior":
        trace = forward(net, x)
        grads = backward(net, trace, y)
        if spec.penalty == "target_distance":
            penalty = loss_ops.TargetDistancePenalty(spec.penalty_target)
        else:
            penalty = loss_ops.L1Penalty()
        prior, bw, bb = loss_ops.prior_loss_with_param_grad(
            net, trace, y, penalty, spec.weight, layer=spec.layer, epsilon=spec.epsilon
        )
        total = cross_entropy(trace.output, y) + prior
        grads = Gradients(
            [g + d for g, d in zip(grads.weight_grads, bw)],
            [g + d for g, d in zip(grads.bias_grads, bb)],
            grads.feature_grads,
        )
        return total, grads

    if family == "loss_scaling":
        if spec.class_factors is None:
            raise ConfigError("loss_scaling needs class_factors")
        factors = np.asarray(spec.class_factors, dtype=np.float64)
        trace = forward(net, x)
        loss = loss_ops.classwise_loss_scaling(
            per_sample_cross_entropy(trace.output, y), y, factors
        )
        return loss, backward(net, trace, y, sample_weights=factors[np.asarray(y)])

    if family == "grad_feature_mask":
        trace = forward(net, x)
        maps = attribution.explain(net, trace, y, method)
        mask = attribution.normalize_abs(maps.layers[spec.layer])
        hook = (spec.layer, lambda g: gradient_ops.mask_feature_gradient(g, mask, spec.weight))
        return cross_entropy(trace.output, y), backward(net, trace, y, feature_grad_transform=hook)

    if family == "grad_weight_scaling":
        if spec.layer >= net.layer_count - 1:
            raise ConfigError("grad_weight_scaling needs relevance above the layer; "
                              f"layer must be < {net.layer_count - 1}")
        trace = forward(net, x)
        maps = attribution.explain(net, trace, y, method)
        r_in = np.abs(maps.layers[spec.layer]).mean(axis=0)
        r_out = np.abs(maps.layers[spec.layer + 1]).mean(axis=0)
        try:
            importance = gradient_ops.weight_importance_scores(r_in, r_out)
        except gradient_ops.DegenerateImportanceError:
            importance = gradient_ops.uniform_importance(net.layers[spec.layer].weights.shape)
        grads = backward(net, trace, y)
        grads.weight_grads[spec.layer] = grads.weight_grads[spec.layer] * importance.values
        return cross_entropy(trace.output, y), grads

    raise ConfigError(f"family {spec.family!r} is not runnable")


class _Recorder:
    """Accumulates the per-iteration metric rows of one run."""

    def __init__(self, config, train, test, log_method):
        self.config = config
        self.train = train
        self.test = test
        self.method = log_method
        self.rows = {k: [] for k in ("train_loss", "train_acc", "test_loss", "test_acc")}
        self.attr_rows = []
        self._last_attr = np.zeros(test.n_dims)
        self.final_net = None

    def record(self, net, t):
        train_trace = forward(net, self.train.features)
        test_trace = forward(net, self.test.features)
        self.rows["train_loss"].append(cross_entropy(train_trace.output, self.train.labels))
        self.rows["train_acc"].append(
            float(np.mean(np.argmax(train_trace.output, axis=1) == self.train.labels)))
        self.rows["test_loss"].append(cross_entropy(test_trace.output, self.test.labels))
        self.rows["test_acc"].append(
            float(np.mean(np.argmax(test_trace.output, axis=1) == self.test.labels)))
        every = self.config.attr_every
        if every > 0 and (t == 1 or t % every == 0):
            maps = attribution.explain(net, test_trace, self.test.labels, self.method)
            r = maps.layers[0]
            if self.config.attr_normalization == SIGNED:
                r = attribution.normalize_signed(r)
            else:
                r = attribution.normalize_abs(r)
            self._last_attr = r.mean(axis=0)
        self.attr_rows.append(self._last_attr)

    def finish(self, seed) -> MetricsLog:
        t = len(self.rows["train_loss"])
        attr = np.asarray(self.attr_rows)
        return MetricsLog(
            seed=seed,
            iteration=np.arange(1, t + 1),
            train_loss=np.asarray(self.rows["train_loss"]),
            train_acc=np.asarray(self.rows["train_acc"]),
            test_loss=np.asarray(self.rows["test_loss"]),
            test_acc=np.asarray(self.rows["test_acc"]),
            attr=attr,
            attr_smooth=cumulative_mean(attr) if t else attr,
        )


def run_single(config: ExperimentConfig, seed) -> tuple[MetricsLog, DenseNetwork]:
    """One seeded run; returns the metrics log and the final network."""
    data_seed, init_seed, train_seed, aug_seed = _derive_seeds(seed)
    train, test = _make_data(config, data_seed)
    net = build_network(config.layer_sizes, config.activations, init_seed)
    train_rng = np.random.default_rng(train_seed)
    aug_rng = np.random.default_rng(aug_seed)
    method = _training_method(config)
    recorder = _Recorder(config, train, test, method)
    spec = config.augmentation

    if config.mini_epochs > 0 or spec.family == "data_redistribution":
        if config.mini_epochs < 1:
            raise ConfigError("data_redistribution runs need mini_epochs > 0")
        if spec.family == "prune":
            raise ConfigError("the prune family does not combine with mini-epoch runs")
        log = _run_miniepochs(config, net, train, test, train_rng, aug_rng, method,
                              recorder, seed)
        return log, recorder.final_net

    state = None
    sampler = _BatchSampler(np.arange(train.n_samples), config.train.batch_size, train_rng)
    for t in range(1, config.train.iterations + 1):
        idx = sampler.next_batch()
        _, grads = _step_gradients(net, train.features[idx], train.labels[idx],
                                   spec, method, aug_rng)
        net, state = sgd_momentum_step(net, grads, state,
                                       config.train.learning_rate, config.train.momentum)
        recorder.record(net, t)

    if spec.family == "prune":
        net = _prune_and_finetune(config, net, train, method, recorder, train_rng)

    recorder.final_net = net
    return recorder.finish(seed), net


def _prune_and_finetune(config, net, train, method, recorder, train_rng):
    spec = config.augmentation
    importance = pruning.neuron_importance(net, train.features, train.labels, method)
    counts = [int(np.floor(spec.prune_fraction * s.shape[0] + 0.5)) for s in importance]
    net = pruning.prune_neurons(net, importance, counts)
    if spec.fine_tune_iterations > 0:
        # fresh optimizer state: the pruned parameter shapes differ
        state = None
        sampler = _BatchSampler(np.arange(train.n_samples), config.train.batch_size, train_rng)
        t0 = config.train.iterations
        for t in range(1, spec.fine_tune_iterations + 1):
            idx = sampler.next_batch()
            trace = forward(net, train.features[idx])
            grads = backward(net, trace, train.labels[idx])
            net, state = sgd_momentum_step(net, grads, state,
                                           config.train.learning_rate, config.train.momentum)
            recorder.record(net, t0 + t)
    return net


def _classwise_accuracy(net, dataset):
    preds = np.argmax(forward(net, dataset.features).output, axis=1)
    classes = np.arange(dataset.n_classes)
    return np.array([
        float(np.mean(preds[dataset.labels == c] == c)) for c in classes
    ])


def _empirical_proportions(labels, n_classes):
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


def _run_miniepochs(config, net, train, test, train_rng, aug_rng, method, recorder, seed):
    """Mini-epoch loop: resample, train a few iterations, refresh metrics."""
    spec = config.augmentation
    n_classes = train.n_classes
    redistributing = spec.family == "data_redistribution"
    reps = None
    prev_averaged = None
    if redistributing and spec.policy != redistribution.INVERSE_FREQUENCY:
        reps = redistribution.RepresentativeSet.select(
            train.labels, config.representatives_per_class, aug_rng
        )
    empirical = _empirical_proportions(train.labels, n_classes)
    freq_metrics = redistribution.ClassMetricTable(
        -np.log(empirical), redistribution.INVERSE_FREQUENCY
    )

    state = None
    metrics = None  # class metric table once attributions are available
    me_rows = {"p": [], "acc": [], "balance": []}
    t = 0
    for me in range(1, config.mini_epochs + 1):
        if not redistributing:
            p = empirical
        elif spec.policy == redistribution.INVERSE_FREQUENCY:
            p = redistribution.class_proportions(freq_metrics, spec.orientation)
        elif metrics is not None:
            p = redistribution.class_proportions(metrics, spec.orientation)
        else:
            p = empirical
        idx = redistribution.resample_miniepoch(train.labels, p, config.mini_epoch_size,
                                                train_rng)
        sampler = _BatchSampler(idx, config.train.batch_size, train_rng)
        # the resampling IS the data_redistribution augmentation; any other
        # family still applies at its own place in the step
        step_spec = AugmentationSpec(family="none") if redistributing else spec
        for _ in range(config.mini_epoch_iterations):
            t += 1
            batch = sampler.next_batch()
            _, grads = _step_gradients(net, train.features[batch], train.labels[batch],
                                       step_spec, method, aug_rng)
            net, state = sgd_momentum_step(net, grads, state,
                                           config.train.learning_rate, config.train.momentum)
            recorder.record(net, t)

        if reps is not None:
            rep_trace = forward(net, train.features[reps.indices])
            maps = attribution.explain(net, rep_trace, train.labels[reps.indices], method)
            reps.push(maps.layers[0])
            averaged = reps.averaged()
            per_sample = None
            if spec.policy == redistribution.ENTROPY:
                per_sample = np.array([
                    redistribution.attribution_entropy(m) for m in averaged
                ])
            elif prev_averaged is not None:
                per_sample = np.array([
                    redistribution.attribution_mse_distance(a, b)
                    for a, b in zip(averaged, prev_averaged)
                ])
            prev_averaged = averaged
            if per_sample is not None:
                by_class = reps.classwise_mean(per_sample)
                metrics = redistribution.ClassMetricTable(
                    [by_class[c] for c in range(n_classes)], spec.policy
                )

        class_acc = _classwise_accuracy(net, test)
        score = redistribution.balance_score(class_acc)
        me_rows["p"].append(p)
        me_rows["acc"].append(class_acc)
        me_rows["balance"].append(np.inf if score is redistribution.PERFECTLY_BALANCED
                                  else score)

    recorder.final_net = net
    log = recorder.finish(seed)
    log.mini_epoch = np.arange(1, config.mini_epochs + 1)
    log.proportions = np.asarray(me_rows["p"])
    log.class_acc = np.asarray(me_rows["acc"])
    log.balance = np.asarray(me_rows["balance"])
    return log


def run_experiment(config: ExperimentConfig):
    """Run every configured seed sequentially; returns one MetricsLog per seed."""
    logs = []
    for seed in config.seeds:
        try:
            log, _ = run_single(config, seed)
        except Exception as exc:
            raise type(exc)(f"seed {seed}: {exc}") from exc
        logs.append(log)
    return logs


# ---------------------------------------------------------------------------
# Post-processing.
# ---------------------------------------------------------------------------

def cumulative_mean(series) -> np.ndarray:
    """out[t] = mean(in[0..t]) along the first axis."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("cumulative_mean of an empty series")
    denom = np.arange(1, arr.shape[0] + 1, dtype=np.float64)
    if arr.ndim > 1:
        denom = denom.reshape(-1, *([1] * (arr.ndim - 1)))
    return np.cumsum(arr, axis=0) / denom


@dataclass
class GridSpec:
    x_min: float = -3.0
    x_max: float = 3.0
    y_min: float = -3.0
    y_max: float = 3.0
    nx: int = 100
    ny: int = 100


def decision_boundary(net: DenseNetwork, grid: GridSpec):
    """Class predictions over a rectangular grid, for 2-D input models.

    Returns (xs, ys, classes) with classes shaped (ny, nx).
    """
    if net.layers[0].in_units != 2:
        raise UsageError("decision_boundary needs a model with 2-D inputs")
    xs = np.linspace(grid.x_min, grid.x_max, grid.nx)
    ys = np.linspace(grid.y_min, grid.y_max, grid.ny)
    xx, yy = np.meshgrid(xs, ys)
    points = np.stack([xx.ravel(), yy.ravel()], axis=1)
    preds = np.argmax(forward(net, points).output, axis=1)
    return xs, ys, preds.reshape(grid.ny, grid.nx)


@dataclass
class AggregateLog:
    """Per-iteration mean and population std across seeds, as two logs."""

    mean: MetricsLog
    std: MetricsLog


def aggregate_seeds(logs) -> AggregateLog:
    if not logs:
        raise UsageError("no logs to aggregate")
    t = logs[0].iteration
    for log in logs[1:]:
        if log.iteration.shape != t.shape or log.attr.shape != logs[0].attr.shape:
            raise ConsistencyError("logs have mismatched shapes")

    def agg(name, reducer):
        fields = {}
        for key in ("train_loss", "train_acc", "test_loss", "test_acc", "attr", "attr_smooth"):
            fields[key] = reducer(np.stack([getattr(l, key) for l in logs]), 0)
        extra = {}
        if all(l.mini_epoch is not None for l in logs):
            extra = {
                "mini_epoch": logs[0].mini_epoch,
                "proportions": reducer(np.stack([l.proportions for l in logs]), 0),
                "class_acc": reducer(np.stack([l.class_acc for l in logs]), 0),
                "balance": reducer(np.stack([l.balance for l in logs]), 0),
            }
        return MetricsLog(seed=name, iteration=t.copy(), **fields, **extra)

    return AggregateLog(mean=agg(-1, np.mean), std=agg(-2, np.std))


# ---------------------------------------------------------------------------
# File outputs.
# ---------------------------------------------------------------------------

def write_run_outputs(out_dir, config: ExperimentConfig, logs, started, wall_clock):
    """Write per-seed and aggregated CSVs plus the run metadata JSON.

    Returns the list of written CSV paths (metadata excluded, since it holds
    timestamps and must not enter reproducibility hashes).
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    prefix = f"{config.experiment}_{config.augmentation.family}"
    paths = []
    attr_enabled = config.attr_every > 0
    for log in logs:
        path = os.path.join(out_dir, f"{prefix}_seed{log.seed}.csv")
        log.to_csv(path, attr_enabled=attr_enabled)
        paths.append(path)
        if log.mini_epoch is not None:
            mpath = os.path.join(out_dir, f"{prefix}_seed{log.seed}_miniepochs.csv")
            log.miniepochs_to_csv(mpath)
            paths.append(mpath)
    agg = aggregate_seeds(logs)
    for tag, log in (("mean", agg.mean), ("std", agg.std)):
        path = os.path.join(out_dir, f"{prefix}_aggregated_{tag}.csv")
        log.to_csv(path, attr_enabled=attr_enabled)
        paths.append(path)
    meta = {
        "experiment": config.experiment,
        "config": config_to_dict(config),
        "seeds": list(config.seeds),
        "library_version": __version__,
        "started": started,
        "wall_clock_seconds": wall_clock,
    }
    with open(os.path.join(out_dir, f"{prefix}_metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, default=_json_default)
        fh.write("\n")
    return paths


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = asdict(config)
    method = config.attribution_method
    doc["attribution_method"] = {
        "kind": method.kind,
        "target": method.target,
        "lrp_rules": {
            str(k): {"kind": r.kind, "epsilon": r.epsilon}
            for k, r in (method.lrp_rules or {}).items()
        } or None,
    }
    return doc
