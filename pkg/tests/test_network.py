import json

import numpy as np
import pytest

from xaug.errors import ConfigError, ConsistencyError, ShapeError, UsageError
from xaug.network import (
    DenseLayer,
    DenseNetwork,
    build_network,
    backward,
    cross_entropy,
    evaluate,
    forward,
    load_network,
    network_from_json,
    network_to_json,
    save_network,
    sgd_momentum_step,
)
from conftest import finite_difference_param_grads, max_relative_error, random_net, safe_batch


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_build_network_toy_architectures():
    net = build_network((5, 64, 32, 16, 2), ("relu", "relu", "relu", "softmax"), seed=0)
    assert net.layer_count == 4
    assert net.layer_sizes == [5, 64, 32, 16, 2]

    single = build_network((2, 2), ("softmax",), seed=0)
    assert single.layer_count == 1


def test_build_network_deterministic():
    a = build_network((3, 4, 2), ("relu", "softmax"), seed=7)
    b = build_network((3, 4, 2), ("relu", "softmax"), seed=7)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.biases, lb.biases)


def test_build_network_init_range():
    net = build_network((4, 8, 2), ("relu", "softmax"), seed=3)
    for layer in net.layers:
        limit = np.sqrt(1.0 / layer.in_units)
        assert np.all(np.abs(layer.weights) <= limit)
        assert np.all(layer.biases == 0.0)


def test_build_network_errors():
    with pytest.raises(ConfigError):
        build_network((3, 4, 2), ("relu",), seed=0)
    with pytest.raises(ConfigError):
        build_network((3, 4, 2), ("softmax", "relu"), seed=0)
    with pytest.raises(ConfigError):
        build_network((3, 0, 2), ("relu", "softmax"), seed=0)


def test_network_shape_validation():
    w1 = np.ones((3, 2))
    w2 = np.ones((2, 4))  # incompatible with 3 outputs below
    with pytest.raises(ShapeError):
        DenseNetwork([DenseLayer(w1, np.zeros(3), "relu"),
                      DenseLayer(w2, np.zeros(2), "softmax")])


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_forward_identity_layer():
    net = DenseNetwork([DenseLayer(np.eye(3), np.zeros(3), "identity")])
    x = np.array([[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]])
    trace = forward(net, x)
    assert np.allclose(trace.output, x)
    assert np.array_equal(trace.inputs[0], x)


def test_forward_softmax_rows_normalized(rng):
    net = build_network((4, 6, 3), ("relu", "softmax"), seed=1)
    trace = forward(net, rng.normal(size=(10, 4)))
    assert np.allclose(trace.output.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((trace.output >= 0) & (trace.output <= 1))


def test_forward_symmetric_softmax():
    net = DenseNetwork([DenseLayer(np.eye(2), np.zeros(2), "softmax")])
    trace = forward(net, np.array([[0.0, 0.0]]))
    assert np.allclose(trace.output, [[0.5, 0.5]])


def test_forward_shape_mismatch():
    net = build_network((4, 2), ("softmax",), seed=0)
    with pytest.raises(ShapeError):
        forward(net, np.zeros((3, 5)))


def test_property_forward_invariants(rng):
    # softmax rows sum to 1 +- 1e-6; relu outputs are >= 0
    for _ in range(100):
        net = random_net(rng)
        x = rng.normal(size=(4, net.layers[0].in_units))
        trace = forward(net, x)
        if net.layers[-1].activation == "softmax":
            assert np.allclose(trace.output.sum(axis=1), 1.0, atol=1e-6)
        for l in range(1, net.layer_count):
            if net.layers[l - 1].activation == "relu":
                assert np.all(trace.inputs[l] >= 0)


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_perfect_prediction():
    assert cross_entropy(np.array([[1.0, 0.0]]), [0]) == 0.0


def test_cross_entropy_uniform():
    assert cross_entropy(np.array([[0.5, 0.5]]), [0]) == pytest.approx(np.log(2), abs=1e-12)


def test_cross_entropy_batch_mean():
    a = cross_entropy(np.array([[0.7, 0.3]]), [0])
    b = cross_entropy(np.array([[0.2, 0.8]]), [1])
    both = cross_entropy(np.array([[0.7, 0.3], [0.2, 0.8]]), [0, 1])
    assert both == pytest.approx((a + b) / 2, abs=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(np.array([[0.5, 0.5]]), [2])


def test_cross_entropy_floor():
    val = cross_entropy(np.array([[0.0, 1.0]]), [0])
    assert np.isfinite(val)
    assert val == pytest.approx(-np.log(1e-12))


def test_property_batch_loss_linearity(rng):
    # loss of concatenated batches = sample-count-weighted mean of batch losses
    for _ in range(100):
        n1, n2 = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        c = int(rng.integers(2, 5))
        p1 = rng.dirichlet(np.ones(c), size=n1)
        p2 = rng.dirichlet(np.ones(c), size=n2)
        y1 = rng.integers(0, c, size=n1)
        y2 = rng.integers(0, c, size=n2)
        joint = cross_entropy(np.vstack([p1, p2]), np.concatenate([y1, y2]))
        weighted = (n1 * cross_entropy(p1, y1) + n2 * cross_entropy(p2, y2)) / (n1 + n2)
        assert abs(joint - weighted) < 1e-10


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_zero_weight_single_layer_matches_fd(rng):
    net = DenseNetwork([DenseLayer(np.zeros((2, 3)), rng.normal(0, 0.2, 2), "softmax")])
    x = rng.normal(size=(4, 3))
    y = rng.integers(0, 2, size=4)
    trace = forward(net, x)
    grads = backward(net, trace, y)
    fw, fb = finite_difference_param_grads(
        lambda n: cross_entropy(forward(n, x).output, y), net)
    assert max_relative_error(grads.weight_grads, fw) < 1e-4
    assert max_relative_error(grads.bias_grads, fb) < 1e-4


def test_backward_duplicate_sample_equals_single(rng):
    net = random_net(rng, sizes=[3, 4, 2])
    x = rng.normal(size=(1, 3))
    y = np.array([1])
    g1 = backward(net, forward(net, x), y)
    xdup = np.repeat(x, 4, axis=0)
    g4 = backward(net, forward(net, xdup), np.repeat(y, 4))
    for a, b in zip(g1.weight_grads, g4.weight_grads):
        assert np.allclose(a, b, atol=1e-12)


def test_backward_random_three_layer_fd(rng):
    for _ in range(10):
        net = random_net(rng, sizes=[4, 6, 5, 3])
        x = safe_batch(rng, net)
        y = rng.integers(0, 3, size=x.shape[0])
        grads = backward(net, forward(net, x), y)
        fw, fb = finite_difference_param_grads(
            lambda n: cross_entropy(forward(n, x).output, y), net)
        assert max_relative_error(grads.weight_grads, fw) < 1e-4
        assert max_relative_error(grads.bias_grads, fb) < 1e-4


def test_backward_stale_trace(rng):
    net = random_net(rng, sizes=[3, 4, 2])
    other = random_net(rng, sizes=[3, 5, 2])
    trace = forward(net, rng.normal(size=(2, 3)))
    with pytest.raises(ConsistencyError):
        backward(other, trace, [0, 1])


def test_backward_feature_grads_shapes(rng):
    net = random_net(rng, sizes=[3, 4, 2])
    x = rng.normal(size=(5, 3))
    trace = forward(net, x)
    grads = backward(net, trace, rng.integers(0, 2, size=5))
    for l in range(net.layer_count):
        assert grads.feature_grads[l].shape == trace.inputs[l].shape


def test_backward_with_feature_mask_matches_fd(rng):
    # masked forward must backpropagate exactly through the mask constant
    net = random_net(rng, sizes=[3, 4, 2])
    x = safe_batch(rng, net, n=4)
    y = rng.integers(0, 2, size=4)
    mask = rng.uniform(0.5, 1.5, size=(4, 4))
    trace = forward(net, x, feature_mask=(1, mask))
    grads = backward(net, trace, y)
    fw, fb = finite_difference_param_grads(
        lambda n: cross_entropy(forward(n, x, feature_mask=(1, mask)).output, y), net)
    assert max_relative_error(grads.weight_grads, fw) < 1e-4
    assert max_relative_error(grads.bias_grads, fb) < 1e-4


def test_property_gradient_correctness(rng):
    # random nets up to 4 layers, probed coordinates vs central differences
    for _ in range(100):
        net = random_net(rng)
        x = safe_batch(rng, net, n=3)
        y = rng.integers(0, net.layers[-1].out_units, size=3)
        grads = backward(net, forward(net, x), y)

        def loss_fn(n):
            return cross_entropy(forward(n, x).output, y)

        # probe 3 random weight coordinates
        step = 1e-5
        for _ in range(3):
            l = int(rng.integers(0, net.layer_count))
            layer = net.layers[l]
            i = int(rng.integers(0, layer.weights.shape[0]))
            j = int(rng.integers(0, layer.weights.shape[1]))
            orig = layer.weights[i, j]
            layer.weights[i, j] = orig + step
            hi = loss_fn(net)
            layer.weights[i, j] = orig - step
            lo = loss_fn(net)
            layer.weights[i, j] = orig
            fd = (hi - lo) / (2 * step)
            an = grads.weight_grads[l][i, j]
            assert abs(an - fd) / max(abs(an), abs(fd), 1e-6) < 1e-4


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def _constant_grads(net, value):
    from xaug.network import Gradients
    return Gradients(
        [np.full_like(l.weights, value) for l in net.layers],
        [np.full_like(l.biases, value) for l in net.layers],
        [],
    )


def test_sgd_no_momentum_is_plain_descent(rng):
    net = random_net(rng, sizes=[2, 3, 2])
    grads = _constant_grads(net, 0.5)
    stepped, _ = sgd_momentum_step(net, grads, None, learning_rate=1.0, momentum=0.0)
    for before, after in zip(net.layers, stepped.layers):
        assert np.allclose(after.weights, before.weights - 0.5)


def test_sgd_momentum_two_steps():
    # v1 = g, v2 = 0.9 g + g = 1.9 g; total displacement 2.9 g
    net = DenseNetwork([DenseLayer(np.zeros((1, 1)), np.zeros(1), "identity")])
    grads = _constant_grads(net, 1.0)
    n1, state = sgd_momentum_step(net, grads, None, 1.0, 0.9)
    assert n1.layers[0].weights[0, 0] == pytest.approx(-1.0)
    n2, state = sgd_momentum_step(n1, grads, state, 1.0, 0.9)
    assert n2.layers[0].weights[0, 0] == pytest.approx(-1.0 - 1.9)


def test_sgd_zero_gradient_fixed_point(rng):
    net = random_net(rng, sizes=[2, 2])
    grads = _constant_grads(net, 0.0)
    stepped, _ = sgd_momentum_step(net, grads, None, 0.1, 0.9)
    for before, after in zip(net.layers, stepped.layers):
        assert np.array_equal(after.weights, before.weights)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_all_correct():
    net = DenseNetwork([DenseLayer(np.eye(2), np.zeros(2), "softmax")])
    x = np.array([[3.0, 0.0], [0.0, 3.0]])
    assert evaluate(net, x, [0, 1]) == 1.0


def test_evaluate_constant_output_balanced():
    w = np.array([[1.0, 0.0], [0.0, 0.0]])  # always predicts class 0
    net = DenseNetwork([DenseLayer(w, np.array([5.0, 0.0]), "softmax")])
    x = np.zeros((10, 2))
    y = np.array([0, 1] * 5)
    assert evaluate(net, x, y) == 0.5


def test_evaluate_hand_built_separable():
    # one weight row per class pointing at its cluster
    w = np.array([[1.0, 1.0], [-1.0, -1.0]])
    net = DenseNetwork([DenseLayer(w, np.zeros(2), "softmax")])
    x = np.array([[1, 1], [2, 1], [-1, -1], [-2, -1]], dtype=float)
    y = np.array([0, 0, 1, 1])
    assert evaluate(net, x, y) == 1.0


def test_evaluate_empty_dataset():
    net = build_network((2, 2), ("softmax",), seed=0)
    with pytest.raises(UsageError):
        evaluate(net, np.zeros((0, 2)), np.zeros(0, dtype=int))


# ---------------------------------------------------------------------------
# determinism and serialization
# ---------------------------------------------------------------------------

def test_property_training_determinism(rng):
    from xaug.network import MomentumState

    for _ in range(5):
        seed = int(rng.integers(0, 1000))
        results = []
        for _ in range(2):
            net = build_network((3, 5, 2), ("relu", "softmax"), seed=seed)
            data_rng = np.random.default_rng(seed)
            x = data_rng.normal(size=(20, 3))
            y = data_rng.integers(0, 2, size=20)
            state = None
            for _ in range(10):
                grads = backward(net, forward(net, x), y)
                net, state = sgd_momentum_step(net, grads, state, 0.05, 0.9)
            results.append(net)
        for la, lb in zip(results[0].layers, results[1].layers):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.biases, lb.biases)


def test_serialization_roundtrip_lossless(rng, tmp_path):
    net = random_net(rng, sizes=[4, 7, 3])
    path = tmp_path / "net.json"
    save_network(net, path)
    loaded = load_network(path)
    for la, lb in zip(net.layers, loaded.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.biases, lb.biases)
        assert la.activation == lb.activation


def test_serialization_format_fields(rng):
    net = random_net(rng, sizes=[2, 3, 2])
    doc = network_to_json(net)
    assert doc["format"] == "xaug-dense-network"
    assert doc["version"] == 1
    assert doc["layer_sizes"] == [2, 3, 2]
    assert len(doc["layers"]) == 2
    # document survives a JSON text round trip bit-exactly
    again = network_from_json(json.loads(json.dumps(doc)))
    for la, lb in zip(net.layers, again.layers):
        assert np.array_equal(la.weights, lb.weights)


def test_deserialization_rejects_bad_format():
    with pytest.raises(ConfigError):
        network_from_json({"format": "something-else", "version": 1})
