"""Shared test helpers: finite-difference oracles and random net factories."""

import numpy as np
import pytest

from xaug.network import DenseNetwork, build_network, forward


def finite_difference_param_grads(loss_fn, net: DenseNetwork, step=1e-5):
    """Central finite differences of loss_fn(net) w.r.t. every parameter.

    Mutates each entry in place and restores it; independent of the backward
    implementation under test.
    """
    weight_grads = [np.zeros_like(l.weights) for l in net.layers]
    bias_grads = [np.zeros_like(l.biases) for l in net.layers]
    for l, layer in enumerate(net.layers):
        for arr, out in ((layer.weights, weight_grads[l]), (layer.biases, bias_grads[l])):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                hi = loss_fn(net)
                arr[idx] = orig - step
                lo = loss_fn(net)
                arr[idx] = orig
                out[idx] = (hi - lo) / (2.0 * step)
    return weight_grads, bias_grads


def max_relative_error(analytic, numeric, floor=1e-6):
    errs = []
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        errs.append(np.max(np.abs(a - b) / denom))
    return max(errs)


def random_net(rng, sizes=None, final="softmax", bias_scale=0.2):
    """Random small network with nonzero biases (keeps finite-difference
    probes away from exact ReLU kinks at z = 0)."""
    if sizes is None:
        n_layers = rng.integers(1, 4)
        sizes = [int(rng.integers(2, 7)) for _ in range(n_layers + 1)]
    acts = ["relu"] * (len(sizes) - 2) + [final]
    net = build_network(sizes, acts, seed=int(rng.integers(0, 2**31)))
    for layer in net.layers:
        layer.biases = rng.normal(0.0, bias_scale, size=layer.biases.shape)
    return net


def safe_batch(rng, net, n=6, min_abs_preact=1e-3, tries=50):
    """A batch whose pre-activations stay away from ReLU kinks."""
    d = net.layers[0].in_units
    for _ in range(tries):
        x = rng.normal(size=(n, d))
        trace = forward(net, x)
        if min(np.min(np.abs(z)) for z in trace.preacts) > min_abs_preact:
            return x
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
