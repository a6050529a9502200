import numpy as np
import pytest

from xaug.attribution import (
    AttributionMethod,
    LrpRule,
    SEED_PROBABILITY,
    explain,
    lrp_dense_epsilon,
    lrp_dense_zplus,
    lrp_epsilon_param_grad,
    normalize_abs,
    normalize_signed,
    relevance_to_csv,
)
from xaug.errors import ConfigError
from xaug.network import DenseLayer, DenseNetwork, build_network, forward
from conftest import random_net, safe_batch


def lrp0_method(n_layers):
    return AttributionMethod(
        kind="lrp", lrp_rules={l: LrpRule("epsilon", 0.0) for l in range(n_layers)})


def zero_bias_net(rng, sizes):
    acts = ["relu"] * (len(sizes) - 2) + ["softmax"]
    return build_network(sizes, acts, seed=int(rng.integers(0, 2**31)))


# ---------------------------------------------------------------------------
# single-rule operations
# ---------------------------------------------------------------------------

def test_lrp_epsilon_hand_case():
    # W=(1,1), b=0, x=(1,3): z=4, out relevance 4 -> input relevance (1,3)
    layer = DenseLayer(np.array([[1.0, 1.0]]), np.zeros(1), "identity")
    rel = lrp_dense_epsilon(layer, np.array([[1.0, 3.0]]), np.array([[4.0]]), 0.0)
    assert np.allclose(rel, [[1.0, 3.0]])


def test_lrp_epsilon_zero_relevance():
    layer = DenseLayer(np.array([[2.0, -1.0]]), np.zeros(1), "identity")
    rel = lrp_dense_epsilon(layer, np.array([[1.0, 1.0]]), np.array([[0.0]]), 1e-6)
    assert np.allclose(rel, 0.0)


def test_lrp_epsilon_conservation_zero_bias(rng):
    for _ in range(20):
        layer = DenseLayer(rng.normal(size=(4, 6)), np.zeros(4), "identity")
        a = rng.normal(size=(3, 6))
        r_out = rng.normal(size=(3, 4))
        r_in = lrp_dense_epsilon(layer, a, r_out, 0.0)
        assert np.allclose(r_in.sum(axis=1), r_out.sum(axis=1), atol=1e-9)


def test_lrp_epsilon_rejects_zero_eps_with_bias():
    layer = DenseLayer(np.ones((1, 2)), np.array([0.5]), "identity")
    with pytest.raises(ConfigError):
        lrp_dense_epsilon(layer, np.ones((1, 2)), np.ones((1, 1)), 0.0)


def test_lrp_zplus_hand_case():
    # W=(1,-1), x=(1,1), out relevance 1 -> (1, 0)
    layer = DenseLayer(np.array([[1.0, -1.0]]), np.zeros(1), "identity")
    rel = lrp_dense_zplus(layer, np.array([[1.0, 1.0]]), np.array([[1.0]]))
    assert np.allclose(rel, [[1.0, 0.0]], atol=1e-6)


def test_lrp_zplus_nonnegative(rng):
    for _ in range(20):
        layer = DenseLayer(rng.normal(size=(3, 5)), np.zeros(3), "identity")
        a = np.abs(rng.normal(size=(2, 5)))
        r_out = np.abs(rng.normal(size=(2, 3)))
        rel = lrp_dense_zplus(layer, a, r_out)
        assert np.all(rel >= -1e-12)


def test_lrp_zplus_zero_relevance(rng):
    layer = DenseLayer(rng.normal(size=(3, 5)), np.zeros(3), "identity")
    rel = lrp_dense_zplus(layer, np.abs(rng.normal(size=(2, 5))), np.zeros((2, 3)))
    assert np.allclose(rel, 0.0)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def test_normalize_signed_examples():
    assert np.allclose(normalize_signed(np.array([2.0, -4.0, 0.0])), [0.5, -1.0, 0.0])
    assert np.allclose(normalize_signed(np.zeros(2)), [0.0, 0.0])


def test_normalize_abs_examples():
    assert np.allclose(normalize_abs(np.array([2.0, -4.0])), [0.5, 1.0])
    assert np.allclose(normalize_abs(np.array([-3.0])), [1.0])
    assert np.allclose(normalize_abs(np.zeros(3)), [0.0, 0.0, 0.0])


def test_property_normalizations(rng):
    for _ in range(100):
        r = rng.normal(size=(int(rng.integers(1, 5)), int(rng.integers(1, 8))))
        signed = normalize_signed(r)
        absn = normalize_abs(r)
        nonzero = np.abs(r).max(axis=1) > 0
        assert np.allclose(np.abs(signed).max(axis=1)[nonzero], 1.0)
        assert np.all((absn >= 0) & (absn <= 1))
        assert np.allclose(np.abs(signed), absn)


# ---------------------------------------------------------------------------
# full explanation passes
# ---------------------------------------------------------------------------

def test_lrp0_equals_gradient_times_input(rng):
    for _ in range(10):
        sizes = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(2, 5)))]
        net = zero_bias_net(rng, sizes)
        x = rng.normal(size=(5, sizes[0]))
        y = rng.integers(0, sizes[-1], size=5)
        trace = forward(net, x)
        lrp = explain(net, trace, y, lrp0_method(net.layer_count))
        gxi = explain(net, trace, y, AttributionMethod(kind="gradient_x_input"))
        for l in range(net.layer_count):
            assert np.allclose(lrp.layers[l], gxi.layers[l], atol=1e-6)


def test_lrp_conservation_against_logit(rng):
    for _ in range(10):
        sizes = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(2, 5)))]
        net = zero_bias_net(rng, sizes)
        x = rng.normal(size=(4, sizes[0]))
        y = rng.integers(0, sizes[-1], size=4)
        trace = forward(net, x)
        maps = explain(net, trace, y, lrp0_method(net.layer_count))
        logits = trace.preacts[-1][np.arange(4), y]
        total = maps.layers[0].sum(axis=1)
        denom = np.maximum(np.abs(logits), 1e-9)
        assert np.max(np.abs(total - logits) / denom) < 1e-6


def test_gradient_on_linear_layer_is_weight_row(rng):
    w = rng.normal(size=(1, 4))
    net = DenseNetwork([DenseLayer(w, np.zeros(1), "identity")])
    x = rng.normal(size=(3, 4))
    maps = explain(net, forward(net, x), None,
                   AttributionMethod(kind="gradient", target=0))
    assert np.allclose(maps.layers[0], np.tile(w, (3, 1)))


def test_guided_backprop_zero_at_inactive_relus(rng):
    for _ in range(20):
        net = random_net(rng, sizes=[4, 6, 5, 2])
        x = rng.normal(size=(6, 4))
        trace = forward(net, x)
        y = rng.integers(0, 2, size=6)
        maps = explain(net, trace, y, AttributionMethod(kind="guided_backprop"))
        for l in range(1, net.layer_count):
            inactive = trace.preacts[l - 1] <= 0
            assert np.all(maps.layers[l][inactive] == 0.0)


def test_explain_target_modes(rng):
    net = random_net(rng, sizes=[3, 4, 2])
    x = rng.normal(size=(4, 3))
    trace = forward(net, x)
    maps_pred = explain(net, trace, None, AttributionMethod(kind="lrp", target="predicted_class"))
    assert np.array_equal(maps_pred.targets, np.argmax(trace.output, axis=1))
    maps_fixed = explain(net, trace, None, AttributionMethod(kind="lrp", target=1))
    assert np.all(maps_fixed.targets == 1)
    with pytest.raises(ConfigError):
        explain(net, trace, None, AttributionMethod(kind="lrp", target="true_class"))


def test_probability_seeding_flips_sign_with_negative_logit(rng):
    net = random_net(rng, sizes=[3, 4, 2])
    x = rng.normal(size=(8, 3))
    y = rng.integers(0, 2, size=8)
    trace = forward(net, x)
    logit_maps = explain(net, trace, y, AttributionMethod(kind="lrp"))
    prob_maps = explain(net, trace, y, AttributionMethod(kind="lrp", seed_mode=SEED_PROBABILITY))
    zt = trace.preacts[-1][np.arange(8), y]
    for i in range(8):
        a, b = logit_maps.layers[0][i], prob_maps.layers[0][i]
        if np.abs(a).max() < 1e-12:
            continue
        ratio = b[np.abs(a) > 1e-12] / a[np.abs(a) > 1e-12]
        assert np.allclose(ratio, ratio[0], rtol=1e-6)  # one scale per sample
        assert np.sign(ratio[0]) == np.sign(zt[i]) or zt[i] == 0


def test_property_per_sample_independence(rng):
    # explaining a batch equals explaining samples one at a time
    for _ in range(100):
        net = random_net(rng)
        n = int(rng.integers(2, 5))
        x = rng.normal(size=(n, net.layers[0].in_units))
        y = rng.integers(0, net.layers[-1].out_units, size=n)
        trace = forward(net, x)
        for kind in ("lrp", "gradient", "gradient_x_input", "guided_backprop"):
            method = AttributionMethod(kind=kind)
            batch_maps = explain(net, trace, y, method)
            i = int(rng.integers(0, n))
            single = explain(net, forward(net, x[i:i + 1]), y[i:i + 1], method)
            for l in range(net.layer_count):
                assert np.allclose(batch_maps.layers[l][i], single.layers[l][0], atol=1e-12)


def test_property_explain_deterministic(rng):
    for _ in range(100):
        net = random_net(rng)
        x = rng.normal(size=(3, net.layers[0].in_units))
        y = rng.integers(0, net.layers[-1].out_units, size=3)
        trace = forward(net, x)
        m = AttributionMethod(kind="lrp")
        a = explain(net, trace, y, m)
        b = explain(net, trace, y, m)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la, lb)


def test_composite_rules_apply_per_layer(rng):
    net = zero_bias_net(rng, [3, 4, 2])
    x = np.abs(rng.normal(size=(3, 3)))
    y = rng.integers(0, 2, size=3)
    trace = forward(net, x)
    composite = AttributionMethod(
        kind="lrp",
        lrp_rules={0: LrpRule("zplus"), 1: LrpRule("epsilon", 1e-6)},
    )
    maps = explain(net, trace, y, composite)
    pure_eps = explain(net, trace, y, AttributionMethod(kind="lrp"))
    assert not np.allclose(maps.layers[0], pure_eps.layers[0])


def test_unknown_rule_is_config_error():
    with pytest.raises(ConfigError):
        LrpRule("gamma")


# ---------------------------------------------------------------------------
# differentiable epsilon-LRP path
# ---------------------------------------------------------------------------

def test_lrp_param_grad_matches_fd(rng):
    from conftest import finite_difference_param_grads, max_relative_error

    eps = 1e-4
    for _ in range(5):
        net = random_net(rng, sizes=[3, 5, 4, 2])
        x = safe_batch(rng, net, n=4)
        y = rng.integers(0, 2, size=4)
        cot = rng.normal(size=(4, 3))
        method = AttributionMethod(
            kind="lrp", lrp_rules={l: LrpRule("epsilon", eps) for l in range(3)})

        def loss_fn(n):
            t = forward(n, x)
            return float((cot * explain(n, t, y, method).layers[0]).sum())

        trace = forward(net, x)
        bw, bb = lrp_epsilon_param_grad(net, trace, y, cot, layer=0, epsilon=eps)
        fw, fb = finite_difference_param_grads(loss_fn, net)
        assert max_relative_error(bw, fw) < 1e-3
        assert max_relative_error(bb, fb) < 1e-3


def test_lrp_param_grad_intermediate_layer(rng):
    from conftest import finite_difference_param_grads, max_relative_error

    eps = 1e-4
    net = random_net(rng, sizes=[3, 5, 4, 2])
    x = safe_batch(rng, net, n=4)
    y = rng.integers(0, 2, size=4)
    cot = rng.normal(size=(4, 4))
    method = AttributionMethod(
        kind="lrp", lrp_rules={l: LrpRule("epsilon", eps) for l in range(3)})

    def loss_fn(n):
        return float((cot * explain(n, forward(n, x), y, method).layers[2]).sum())

    bw, bb = lrp_epsilon_param_grad(net, forward(net, x), y, cot, layer=2, epsilon=eps)
    fw, fb = finite_difference_param_grads(loss_fn, net)
    assert max_relative_error(bw, fw) < 1e-3
    assert max_relative_error(bb, fb) < 1e-3


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_relevance_csv_roundtrip(rng, tmp_path):
    net = random_net(rng, sizes=[3, 4, 2])
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 2, size=5)
    maps = explain(net, forward(net, x), y, AttributionMethod(kind="lrp"))
    path = tmp_path / "rel.csv"
    relevance_to_csv(maps, 0, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "feature_0,feature_1,feature_2"
    parsed = np.array([[float(v) for v in line.split(",")] for line in rows[1:]])
    assert np.array_equal(parsed, maps.layers[0])
