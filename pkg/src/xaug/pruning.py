"""Relevance-based neuron importance and pruning of trained networks.

A hidden unit's importance is the mean absolute relevance at its output
position (the input of the next layer) over a set of reference samples,
attributed with respect to each sample's true class. Units with the lowest
importance are pruned first.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, UsageError
from . import attribution
from .network import DenseLayer, DenseNetwork, forward


def neuron_importance(net: DenseNetwork, features, labels,
                      method: attribution.AttributionMethod | None = None,
                      signed: bool = False) -> list[np.ndarray]:
    """Importance scores for every hidden unit, one vector per hidden layer.

    ``signed=True`` averages signed instead of absolute relevance.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        raise UsageError("reference set must be nonempty")
    if method is None:
        method = attribution.AttributionMethod(kind=attribution.LRP)
    trace = forward(net, x)
    maps = attribution.explain(net, trace, labels, method)
    scores = []
    for h in range(net.layer_count - 1):
        rel = maps.layers[h + 1]  # relevance at the outputs of hidden layer h
        scores.append(rel.mean(axis=0) if signed else np.abs(rel).mean(axis=0))
    return scores


def random_importance(net: DenseNetwork, rng) -> list[np.ndarray]:
    """Uniform-random scores; the control criterion for pruning comparisons."""
    return [rng.random(layer.out_units) for layer in net.layers[:-1]]


def _select_lowest(scores, count):
    order = np.argsort(scores, kind="stable")  # ties to the lowest index
    return np.sort(order[:count])


def prune_neurons(net: DenseNetwork, importance, count_per_layer) -> DenseNetwork:
    """Remove the lowest-importance hidden units from each hidden layer.

    ``count_per_layer`` is one int applied to every hidden layer or a
    sequence with one entry per hidden layer. Removing a unit drops its
    weight row and bias entry and the matching weight columns of the next
    layer.
    """
    n_hidden = net.layer_count - 1
    if isinstance(count_per_layer, (int, np.integer)):
        counts = [int(count_per_layer)] * n_hidden
    else:
        counts = [int(c) for c in count_per_layer]
    if len(counts) != n_hidden:
        raise ConfigError(f"expected {n_hidden} prune counts, got {len(counts)}")
    if len(importance) != n_hidden:
        raise ConfigError(f"expected {n_hidden} importance vectors, got {len(importance)}")

    keep_masks = []
    for h, (scores, count) in enumerate(zip(importance, counts)):
        width = net.layers[h].out_units
        if count < 0 or count >= width:
            raise ConfigError(
                f"cannot prune {count} of {width} units in hidden layer {h}"
            )
        drop = _select_lowest(np.asarray(scores, dtype=np.float64), count)
        mask = np.ones(width, dtype=bool)
        mask[drop] = False
        keep_masks.append(mask)

    layers = []
    for l, layer in enumerate(net.layers):
        w, b = layer.weights, layer.biases
        if l < n_hidden:
            w, b = w[keep_masks[l]], b[keep_masks[l]]
        if l > 0:
            w = w[:, keep_masks[l - 1]]
        layers.append(DenseLayer(w.copy(), b.copy(), layer.activation))
    return DenseNetwork(layers)


def pruned_unit_report(importance, counts) -> list[dict]:
    """Per-layer record of which units a prune call removes and their scores."""
    report = []
    for h, (scores, count) in enumerate(zip(importance, counts)):
        scores = np.asarray(scores, dtype=np.float64)
        drop = _select_lowest(scores, count)
        report.append({
            "hidden_layer": h,
            "pruned_units": [int(u) for u in drop],
            "scores": [float(scores[u]) for u in drop],
        })
    return report
