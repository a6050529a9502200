"""Layer-wise attribution for dense networks.

Implements LRP (epsilon rule, z-plus rule, per-layer composites), plain
gradient (sensitivity), gradient x input, and guided backpropagation, all
producing one relevance map per layer input, aligned with the forward trace.

LRP is seeded at the pre-softmax logit of the target class; conservation
therefore holds against the logit, not the probability. Gradient-style
methods are seeded with a one-hot vector at the logits.

Beyond plain relevance maps, this module provides the parameter gradient of
any scalar function of an epsilon-LRP map (``lrp_epsilon_param_grad``). The
relevance pass is a fixed composition of elementwise and affine operations,
so its adjoint can be written out by hand; that is what loss-side
regularizers train through.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .network import (
    DenseLayer,
    DenseNetwork,
    ForwardTrace,
    RELU,
    SOFTMAX,
)

LRP = "lrp"
GRADIENT = "gradient"
GRADIENT_X_INPUT = "gradient_x_input"
GUIDED_BACKPROP = "guided_backprop"
METHODS = (LRP, GRADIENT, GRADIENT_X_INPUT, GUIDED_BACKPROP)

TRUE_CLASS = "true_class"
PREDICTED_CLASS = "predicted_class"

SEED_LOGIT = "logit"
SEED_PROBABILITY = "probability"

DEFAULT_EPSILON = 1e-6
ZPLUS_STABILIZER = 1e-9


@dataclass(frozen=True)
class LrpRule:
    """Propagation rule for one dense layer: 'epsilon' or 'zplus'."""

    kind: str = "epsilon"
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in ("epsilon", "zplus"):
            raise ConfigError(f"unknown LRP rule {self.kind!r}")
        if self.kind == "epsilon" and self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")


@dataclass
class AttributionMethod:
    """Selects an explanation method, its target class, and LRP composite.

    ``lrp_rules`` maps layer index to an LrpRule; layers without an entry use
    the epsilon rule with ``DEFAULT_EPSILON``. ``target`` is 'true_class',
    'predicted_class', or an explicit class index.

    ``seed_mode`` picks the LRP output seed: 'logit' (the pre-softmax score,
    the default; conservation holds against it) or 'probability' (the final
    activation, i.e. the softmax output). The two differ per sample only by
    the positive-over-signed scale p/z, so probability seeding flips the
    whole map's sign exactly where the target logit is negative.
    """

    kind: str = LRP
    lrp_rules: dict[int, LrpRule] | None = None
    target: str | int = TRUE_CLASS
    seed_mode: str = SEED_LOGIT

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ConfigError(f"unknown attribution method {self.kind!r}")
        if self.lrp_rules is not None and self.kind != LRP:
            raise ConfigError("lrp_rules are only meaningful for the LRP method")
        if self.seed_mode not in (SEED_LOGIT, SEED_PROBABILITY):
            raise ConfigError(f"unknown seed mode {self.seed_mode!r}")

    def rule_for(self, layer_index) -> LrpRule:
        if self.lrp_rules and layer_index in self.lrp_rules:
            return self.lrp_rules[layer_index]
        return LrpRule()


@dataclass
class RelevanceMaps:
    """Per-layer relevance tensors plus the explained class per sample.

    ``layers[l]`` is shaped like the input activations of layer ``l``;
    ``layers[0]`` is the input-space attribution.
    """

    layers: list[np.ndarray]
    targets: np.ndarray


def resolve_targets(trace: ForwardTrace, labels, target) -> np.ndarray:
    batch = trace.batch_size
    if target == TRUE_CLASS:
        if labels is None:
            raise ConfigError("target 'true_class' requires labels")
        y = np.asarray(labels)
        if y.shape != (batch,):
            raise ShapeError("labels must have one entry per sample")
        return y.astype(np.intp)
    if target == PREDICTED_CLASS:
        return np.argmax(trace.output, axis=1)
    idx = int(target)
    if not 0 <= idx < trace.preacts[-1].shape[1]:
        raise ConfigError(f"explicit target class {idx} out of range")
    return np.full(batch, idx, dtype=np.intp)


def _sign(z):
    # sign with sign(0) treated as +1
    return np.where(z >= 0, 1.0, -1.0)


def lrp_dense_epsilon(layer: DenseLayer, in_acts, out_relevance, epsilon) -> np.ndarray:
    """Epsilon rule for one dense layer.

    r_j = sum_k a_j w_kj / (z_k + eps*sign(z_k)) * R_k with
    z_k = sum_j a_j w_kj + b_k. epsilon = 0 is only permitted for zero-bias
    layers (the analytic test mode where LRP-0 identities hold).
    """
    a = np.asarray(in_acts, dtype=np.float64)
    r = np.asarray(out_relevance, dtype=np.float64)
    if a.shape[-1] != layer.in_units or r.shape[-1] != layer.out_units:
        raise ShapeError("activation/relevance shapes do not match the layer")
    if epsilon == 0 and np.any(layer.biases != 0):
        raise ConfigError("epsilon = 0 requires zero biases")
    z = a @ layer.weights.T + layer.biases
    denom = z + epsilon * _sign(z)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom != 0)
    return a * (s @ layer.weights)


def lrp_dense_zplus(layer: DenseLayer, in_acts, out_relevance) -> np.ndarray:
    """z+ rule: only positive contributions a_j * max(w_kj, 0) propagate."""
    a = np.asarray(in_acts, dtype=np.float64)
    r = np.asarray(out_relevance, dtype=np.float64)
    if a.shape[-1] != layer.in_units or r.shape[-1] != layer.out_units:
        raise ShapeError("activation/relevance shapes do not match the layer")
    w_plus = np.maximum(layer.weights, 0.0)
    z = a @ w_plus.T
    denom = z + ZPLUS_STABILIZER * _sign(z)
    s = r / denom
    return a * (s @ w_plus)


def explain(net: DenseNetwork, trace: ForwardTrace, labels, method: AttributionMethod) -> RelevanceMaps:
    """Produce relevance maps at every layer input, down to layer 0."""
    targets = resolve_targets(trace, labels, method.target)
    if method.kind == LRP:
        maps = _explain_lrp(net, trace, targets, method)
    elif method.kind == GRADIENT:
        maps = _explain_gradient(net, trace, targets, times_input=False)
    elif method.kind == GRADIENT_X_INPUT:
        maps = _explain_gradient(net, trace, targets, times_input=True)
    else:
        maps = _explain_guided(net, trace, targets)
    for l, r in enumerate(maps):
        if not np.isfinite(r).all():
            raise NumericError("non-finite relevance", layer=l)
    return RelevanceMaps(maps, targets)


def _lrp_seed(trace: ForwardTrace, targets, seed_mode=SEED_LOGIT):
    source = trace.preacts[-1] if seed_mode == SEED_LOGIT else trace.output
    seed = np.zeros_like(source)
    rows = np.arange(source.shape[0])
    seed[rows, targets] = source[rows, targets]
    return seed


def _onehot_seed(trace: ForwardTrace, targets):
    z = trace.preacts[-1]
    seed = np.zeros_like(z)
    seed[np.arange(z.shape[0]), targets] = 1.0
    return seed


def _explain_lrp(net, trace, targets, method):
    n = net.layer_count
    maps = [None] * n
    rel = _lrp_seed(trace, targets, method.seed_mode)
    for l in range(n - 1, -1, -1):
        rule = method.rule_for(l)
        if rule.kind == "epsilon":
            rel = lrp_dense_epsilon(net.layers[l], trace.inputs[l], rel, rule.epsilon)
        else:
            rel = lrp_dense_zplus(net.layers[l], trace.inputs[l], rel)
        maps[l] = rel
    return maps


def _explain_gradient(net, trace, targets, times_input):
    n = net.layer_count
    maps = [None] * n
    g = _onehot_seed(trace, targets)
    for l in range(n - 1, -1, -1):
        s = g @ net.layers[l].weights
        maps[l] = s * trace.inputs[l] if times_input else s
        if l > 0:
            if net.layers[l - 1].activation == RELU:
                g = s * (trace.preacts[l - 1] > 0)
            else:
                g = s
    return maps


def _explain_guided(net, trace, targets):
    # ReLU gates act on both the forward activation state and the sign of the
    # backward signal; the map at a ReLU output is the gated signal, so it is
    # zero wherever the forward ReLU was inactive.
    n = net.layer_count
    maps = [None] * n
    g = _onehot_seed(trace, targets)
    for l in range(n - 1, -1, -1):
        s = g @ net.layers[l].weights
        if l > 0 and net.layers[l - 1].activation == RELU:
            s = s * (trace.preacts[l - 1] > 0) * (s > 0)
        maps[l] = s
        g = s
    return maps


def _per_sample_absmax(r):
    arr = np.asarray(r, dtype=np.float64)
    if arr.ndim == 1:
        return np.max(np.abs(arr))
    return np.max(np.abs(arr), axis=tuple(range(1, arr.ndim)), keepdims=True)


def normalize_signed(r) -> np.ndarray:
    """Per-sample r / max|r|; an all-zero sample stays all-zero."""
    arr = np.asarray(r, dtype=np.float64)
    m = _per_sample_absmax(arr)
    return np.divide(arr, m, out=np.zeros_like(arr), where=m > 0)


def normalize_abs(r) -> np.ndarray:
    """Per-sample |r| / max|r|, values in [0, 1]; all-zero stays all-zero."""
    arr = np.abs(np.asarray(r, dtype=np.float64))
    m = _per_sample_absmax(arr)
    return np.divide(arr, m, out=np.zeros_like(arr), where=m > 0)


# ---------------------------------------------------------------------------
# Differentiable epsilon-LRP: adjoint of the relevance pass.
# ---------------------------------------------------------------------------

def lrp_epsilon_param_grad(
    net: DenseNetwork,
    trace: ForwardTrace,
    targets,
    relevance_cotangent,
    layer: int = 0,
    epsilon: float = DEFAULT_EPSILON,
):
    """Gradient of a scalar loss through the epsilon-LRP relevance at ``layer``.

    Given dL/dR^layer (``relevance_cotangent``), returns per-layer
    (weight_grads, bias_grads) of L with respect to the network parameters.
    The pass reverses both the relevance recursion and the forward pass by
    hand; sign(z) and the ReLU gates are treated as locally constant. The
    relevance recursion is always logit-seeded here.
    """
    n = net.layer_count
    if not 0 <= layer < n:
        raise ConfigError(f"layer {layer} out of range")
    targets = np.asarray(targets, dtype=np.intp)
    r_bar = np.asarray(relevance_cotangent, dtype=np.float64)
    if r_bar.shape != trace.inputs[layer].shape:
        raise ShapeError("cotangent shape does not match the relevance map")

    # Recompute the relevance recursion from the top down to ``layer``,
    # keeping the intermediates the adjoint needs.
    rel = _lrp_seed(trace, targets, SEED_LOGIT)
    denoms = [None] * n
    shares = [None] * n   # s^l = R^{l+1} / denom^l
    rels_out = [None] * n  # relevance entering layer l from above
    for l in range(n - 1, layer - 1, -1):
        lay = net.layers[l]
        a = trace.inputs[l]
        z = a @ lay.weights.T + lay.biases
        denom = z + epsilon * _sign(z)
        s = np.divide(rel, denom, out=np.zeros_like(rel), where=denom != 0)
        rels_out[l] = rel
        denoms[l] = denom
        shares[l] = s
        rel = a * (s @ lay.weights)

    bar_w = [np.zeros_like(l.weights) for l in net.layers]
    bar_b = [np.zeros_like(l.biases) for l in net.layers]
    bar_a = [np.zeros_like(x) for x in trace.inputs]
    bar_z = [np.zeros_like(z) for z in trace.preacts]
    bar_rel = r_bar

    # Reverse the relevance steps from ``layer`` back up to the seed.
    for l in range(layer, n):
        lay = net.layers[l]
        a = trace.inputs[l]
        s = shares[l]
        c = s @ lay.weights
        bar_a[l] += bar_rel * c
        bar_c = bar_rel * a
        bar_w[l] += s.T @ bar_c
        bar_s = bar_c @ lay.weights.T
        d = denoms[l]
        bar_rel = np.divide(bar_s, d, out=np.zeros_like(bar_s), where=d != 0)
        bar_d = -bar_rel * s
        bar_z[l] += bar_d
    # Seed R^L = z ⊙ onehot(target).
    rows = np.arange(trace.batch_size)
    seed_bar = np.zeros_like(bar_rel)
    seed_bar[rows, targets] = bar_rel[rows, targets]
    bar_z[n - 1] += seed_bar

    # Reverse the forward pass; the final activation never feeds the
    # relevance computation, so it needs no adjoint.
    for l in range(n - 1, -1, -1):
        lay = net.layers[l]
        if l < n - 1:
            if lay.activation == RELU:
                bar_z[l] += bar_a[l + 1] * (trace.preacts[l] > 0)
            elif lay.activation == SOFTMAX:
                raise ConfigError("softmax below the final layer is not supported")
            else:
                bar_z[l] += bar_a[l + 1]
        bar_w[l] += bar_z[l].T @ trace.inputs[l]
        bar_b[l] += bar_z[l].sum(axis=0)
        bar_a[l] += bar_z[l] @ lay.weights
    return bar_w, bar_b


def relevance_to_csv(maps: RelevanceMaps, layer: int, path):
    """Write one layer's relevance as CSV: one row per sample, one column per feature."""
    r = maps.layers[layer]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"feature_{j}" for j in range(r.shape[1])])
        for row in r:
            writer.writerow([repr(float(v)) for v in row])
