"""Minimal dense feed-forward networks with cached forward traces.

The engine is deliberately small: dense layers with ReLU / Softmax / identity
activations, exact backpropagation for the mean cross-entropy loss, and SGD
with momentum. Everything is float64 numpy and deterministic under a seed.

Conventions used throughout the package:

* ``weights`` are stored ``(out_units, in_units)``; a layer computes
  ``z = a @ W.T + b``.
* A network with layers ``0 .. L-1`` exposes per-layer *input* activations
  ``a^0 .. a^{L-1}`` (``a^0`` is the raw batch) plus the final output.
* Feature augmentation hooks act multiplicatively on the input of one layer;
  the mask is recorded in the trace so the backward pass stays exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    ConsistencyError,
    NumericError,
    ShapeError,
    UsageError,
)

RELU = "relu"
SOFTMAX = "softmax"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SOFTMAX, IDENTITY)

# Cross-entropy never evaluates log below this probability.
LOG_PROB_FLOOR = 1e-12

NETWORK_FORMAT = "xaug-dense-network"
NETWORK_FORMAT_VERSION = 1


def _as_matrix(x, name="array"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass
class DenseLayer:
    """One fully connected layer: weights (out x in), biases (out,), activation tag."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"biases shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} output units"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise NumericError("layer parameters contain non-finite entries")

    @property
    def in_units(self):
        return self.weights.shape[1]

    @property
    def out_units(self):
        return self.weights.shape[0]

    def copy(self):
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class DenseNetwork:
    """Ordered dense layers; adjacent layers must be shape compatible."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        for i in range(len(self.layers) - 1):
            if self.layers[i].out_units != self.layers[i + 1].in_units:
                raise ShapeError(
                    f"layer {i} outputs {self.layers[i].out_units} units but "
                    f"layer {i + 1} expects {self.layers[i + 1].in_units}"
                )
            if self.layers[i].activation == SOFTMAX:
                raise ConfigError("softmax is only allowed on the final layer")

    @property
    def layer_count(self):
        return len(self.layers)

    @property
    def layer_sizes(self):
        """Unit counts from input to output, length layer_count + 1."""
        return [self.layers[0].in_units] + [l.out_units for l in self.layers]

    @property
    def activations(self):
        return [l.activation for l in self.layers]

    def copy(self):
        return DenseNetwork([l.copy() for l in self.layers])


@dataclass
class ForwardTrace:
    """Cached per-layer tensors for one batch.

    ``inputs[l]`` is the tensor actually fed to layer ``l`` (after the feature
    mask, if one was applied at that layer), ``preacts[l]`` the pre-activation
    ``z^l``, and ``output`` the final activation.
    """

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray
    mask_layer: int | None = None
    mask_values: np.ndarray | None = None

    @property
    def batch_size(self):
        return self.inputs[0].shape[0]


@dataclass
class Gradients:
    """Exact gradients mirroring a network and its trace.

    ``feature_grads[l]`` is the loss gradient with respect to ``inputs[l]`` as
    stored in the trace (i.e. the fed, possibly masked, features).
    """

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    feature_grads: list[np.ndarray]


def combine_gradients(a: Gradients, b: Gradients, ca=1.0, cb=1.0) -> Gradients:
    """Linear combination ca*a + cb*b of two gradient sets."""
    return Gradients(
        [ca * ga + cb * gb for ga, gb in zip(a.weight_grads, b.weight_grads)],
        [ca * ga + cb * gb for ga, gb in zip(a.bias_grads, b.bias_grads)],
        [ca * ga + cb * gb for ga, gb in zip(a.feature_grads, b.feature_grads)],
    )


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    iterations: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")


@dataclass
class MomentumState:
    """Velocity buffers, one per layer for weights and biases."""

    weight_velocity: list[np.ndarray]
    bias_velocity: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: DenseNetwork):
        return cls(
            [np.zeros_like(l.weights) for l in net.layers],
            [np.zeros_like(l.biases) for l in net.layers],
        )


def build_network(layer_sizes, activations, seed) -> DenseNetwork:
    """Deterministically initialize a dense network.

    Weights are uniform in [-sqrt(1/in_units), +sqrt(1/in_units)], biases zero.
    ``layer_sizes`` has one more entry than ``activations``.
    """
    sizes = list(layer_sizes)
    acts = list(activations)
    if len(acts) != len(sizes) - 1:
        raise ConfigError(
            f"{len(sizes)} sizes require {len(sizes) - 1} activations, got {len(acts)}"
        )
    if any(s < 1 for s in sizes):
        raise ConfigError("all layer sizes must be >= 1")
    for i, act in enumerate(acts):
        if act not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {act!r}")
        if act == SOFTMAX and i != len(acts) - 1:
            raise ConfigError("softmax is only allowed on the final layer")
    rng = np.random.default_rng(seed)
    layers = []
    for i, act in enumerate(acts):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        limit = np.sqrt(1.0 / fan_in)
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weights, np.zeros(fan_out), act))
    return DenseNetwork(layers)


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, activation):
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == SOFTMAX:
        return _softmax(z)
    return z


def forward(net: DenseNetwork, batch, feature_mask=None) -> ForwardTrace:
    """Run the network on a batch and cache every intermediate tensor.

    ``feature_mask`` is an optional ``(layer_index, values)`` pair; the input
    of that layer is multiplied elementwise by ``values`` before the affine
    map, and both the mask and the masked inputs are recorded in the trace.
    """
    a = _as_matrix(batch, "batch")
    if a.shape[1] != net.layers[0].in_units:
        raise ShapeError(
            f"batch has {a.shape[1]} features, network expects {net.layers[0].in_units}"
        )
    if not np.isfinite(a).all():
        raise NumericError("batch contains non-finite entries")

    mask_layer = mask_values = None
    if feature_mask is not None:
        mask_layer, mask_values = feature_mask
        mask_values = np.asarray(mask_values, dtype=np.float64)
        if not 0 <= mask_layer < net.layer_count:
            raise ConfigError(f"mask layer {mask_layer} out of range")

    inputs, preacts = [], []
    for l, layer in enumerate(net.layers):
        if mask_layer == l:
            if mask_values.shape != a.shape:
                raise ShapeError(
                    f"mask shape {mask_values.shape} does not match features {a.shape}"
                )
            a = a * mask_values
        inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        if not np.isfinite(z).all():
            raise NumericError("non-finite pre-activation", layer=l)
        preacts.append(z)
        a = _activate(z, layer.activation)
        if not np.isfinite(a).all():
            raise NumericError("non-finite activation", layer=l)
    return ForwardTrace(inputs, preacts, a, mask_layer, mask_values)


def _check_labels(labels, n_classes, n_samples):
    y = np.asarray(labels)
    if y.shape != (n_samples,):
        raise ShapeError(f"labels shape {y.shape} does not match batch size {n_samples}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise IndexError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{y.min()}, {y.max()}]")
    return y.astype(np.intp)


def cross_entropy(probs, labels) -> float:
    """Mean over the batch of -log p[true class], floored at LOG_PROB_FLOOR."""
    p = _as_matrix(probs, "probs")
    y = _check_labels(labels, p.shape[1], p.shape[0])
    picked = p[np.arange(p.shape[0]), y]
    return float(np.mean(-np.log(np.maximum(picked, LOG_PROB_FLOOR))))


def per_sample_cross_entropy(probs, labels) -> np.ndarray:
    p = _as_matrix(probs, "probs")
    y = _check_labels(labels, p.shape[1], p.shape[0])
    picked = p[np.arange(p.shape[0]), y]
    return -np.log(np.maximum(picked, LOG_PROB_FLOOR))


def _check_trace(net: DenseNetwork, trace: ForwardTrace):
    if len(trace.inputs) != net.layer_count or len(trace.preacts) != net.layer_count:
        raise ConsistencyError("trace layer count does not match network")
    for l, layer in enumerate(net.layers):
        if trace.inputs[l].shape[1] != layer.in_units:
            raise ConsistencyError(f"trace inputs at layer {l} do not match network")
        if trace.preacts[l].shape[1] != layer.out_units:
            raise ConsistencyError(f"trace pre-activations at layer {l} do not match network")


def backward(
    net: DenseNetwork,
    trace: ForwardTrace,
    labels,
    sample_weights=None,
    feature_grad_transform=None,
) -> Gradients:
    """Exact cross-entropy gradients for parameters and per-layer features.

    ``sample_weights`` scale each sample's loss term (class-wise loss scaling
    uses this). ``feature_grad_transform`` is an optional
    ``(layer_index, fn)`` pair applied to the feature gradient of that layer
    before it is recorded and propagated further down; this is the hook used
    by gradient-side augmentation.
    """
    _check_trace(net, trace)
    probs = trace.output
    batch = probs.shape[0]
    y = _check_labels(labels, probs.shape[1], batch)

    if sample_weights is None:
        w = np.ones(batch)
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != (batch,):
            raise ShapeError("sample_weights must have one entry per sample")

    hook_layer, hook = (None, None)
    if feature_grad_transform is not None:
        hook_layer, hook = feature_grad_transform

    # d(mean weighted CE)/d probs; zero where the floor clamps the log.
    dp = np.zeros_like(probs)
    picked = probs[np.arange(batch), y]
    live = picked >= LOG_PROB_FLOOR
    dp[np.arange(batch), y] = np.where(live, -w / (batch * np.maximum(picked, LOG_PROB_FLOOR)), 0.0)

    final = net.layers[-1].activation
    z_last = trace.preacts[-1]
    if final == SOFTMAX:
        dz = probs * (dp - (dp * probs).sum(axis=1, keepdims=True))
    elif final == RELU:
        dz = dp * (z_last > 0)
    else:
        dz = dp

    n = net.layer_count
    weight_grads = [None] * n
    bias_grads = [None] * n
    feature_grads = [None] * n
    for l in range(n - 1, -1, -1):
        layer = net.layers[l]
        a = trace.inputs[l]
        weight_grads[l] = dz.T @ a
        bias_grads[l] = dz.sum(axis=0)
        da = dz @ layer.weights
        if hook_layer == l:
            da = hook(da)
        feature_grads[l] = da
        if trace.mask_layer == l:
            da = da * trace.mask_values
        if l > 0:
            act_below = net.layers[l - 1].activation
            if act_below == RELU:
                dz = da * (trace.preacts[l - 1] > 0)
            else:
                dz = da
    return Gradients(weight_grads, bias_grads, feature_grads)


def sgd_momentum_step(
    net: DenseNetwork,
    grads: Gradients,
    state: MomentumState | None,
    learning_rate,
    momentum,
):
    """One optimizer step: v <- momentum*v + g, theta <- theta - lr*v.

    Returns a new network and new state; inputs are not mutated.
    """
    if state is None:
        state = MomentumState.zeros_like(net)
    new_layers, new_vw, new_vb = [], [], []
    for layer, gw, gb, vw, vb in zip(
        net.layers, grads.weight_grads, grads.bias_grads,
        state.weight_velocity, state.bias_velocity,
    ):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ConsistencyError("gradient shapes do not match network")
        if vw.shape != layer.weights.shape:
            raise ConsistencyError("velocity shapes do not match network")
        vw = momentum * vw + gw
        vb = momentum * vb + gb
        new_layers.append(
            DenseLayer(layer.weights - learning_rate * vw,
                       layer.biases - learning_rate * vb,
                       layer.activation)
        )
        new_vw.append(vw)
        new_vb.append(vb)
    return DenseNetwork(new_layers), MomentumState(new_vw, new_vb)


def predict(net: DenseNetwork, features) -> np.ndarray:
    """Argmax class predictions; ties resolve toward the lowest class index."""
    return np.argmax(forward(net, features).output, axis=1)


def evaluate(net: DenseNetwork, features, labels) -> float:
    """Fraction of argmax-correct predictions."""
    x = _as_matrix(features, "features")
    if x.shape[0] == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    y = _check_labels(labels, net.layers[-1].out_units, x.shape[0])
    return float(np.mean(predict(net, x) == y))


# ---------------------------------------------------------------------------
# Serialization: versioned JSON, numbers written as shortest round-trip
# decimals so a save/load cycle is lossless at binary64 precision.
# ---------------------------------------------------------------------------

def network_to_json(net: DenseNetwork) -> dict:
    return {
        "format": NETWORK_FORMAT,
        "version": NETWORK_FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "layers": [
            {"weights": l.weights.tolist(), "biases": l.biases.tolist()}
            for l in net.layers
        ],
    }


def network_from_json(doc: dict) -> DenseNetwork:
    if doc.get("format") != NETWORK_FORMAT:
        raise ConfigError(f"not a {NETWORK_FORMAT} document")
    if doc.get("version") != NETWORK_FORMAT_VERSION:
        raise ConfigError(f"unsupported format version {doc.get('version')!r}")
    layers = [
        DenseLayer(np.array(entry["weights"], dtype=np.float64),
                   np.array(entry["biases"], dtype=np.float64),
                   act)
        for entry, act in zip(doc["layers"], doc["activations"])
    ]
    net = DenseNetwork(layers)
    if net.layer_sizes != list(doc["layer_sizes"]):
        raise ConsistencyError("layer_sizes field does not match weight shapes")
    return net


def save_network(net: DenseNetwork, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_json(net), fh)
        fh.write("\n")


def load_network(path) -> DenseNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_json(json.load(fh))
