"""
Tests for the GCN / GIN / sum encoders and their relation to 1-WL.
"""
import numpy as np
import pytest

from autodiff import Tensor
from config import EncoderConfig
from encoder import encode, gcn_layer, gin_layer, init_encoder_params, sum_layer
from errors import ConfigError, ShapeError
from graph_core import (
    Permutation,
    build_graph,
    erdos_renyi_graph,
    path_graph,
    permute_graph,
    wl_refine,
)
from parameters import ParameterStore


def identity_fnn(width: int, prefix: str = "f"):
    store = ParameterStore()
    for k in range(2):
        store.add(f"{prefix}.{k}.weight", np.eye(width))
        store.add(f"{prefix}.{k}.bias", np.zeros((1, width)))
    return store.bind()


def encoder_params(config, seed):
    return init_encoder_params(config, np.random.default_rng(seed))


# --- single layers -----------------------------------------------------------------

def test_gcn_isolated_node_keeps_features():
    g = build_graph(1, [])
    out = gcn_layer(Tensor([[0.5, 2.0]]), g, Tensor(np.eye(2)))
    np.testing.assert_allclose(out.value, [[0.5, 2.0]])


def test_gcn_zero_weight(er12, rng):
    out = gcn_layer(Tensor(rng.standard_normal((12, 3))), er12, Tensor(np.zeros((3, 4))))
    np.testing.assert_array_equal(out.value, np.zeros((12, 4)))


def test_gcn_triangle_uniform(triangle):
    out = gcn_layer(Tensor(np.ones((3, 1))), triangle, Tensor([[1.0]]))
    np.testing.assert_allclose(out.value, np.ones((3, 1)), atol=1e-12)


def test_gcn_shape_mismatch(triangle):
    with pytest.raises(ShapeError):
        gcn_layer(Tensor(np.ones((4, 1))), triangle, Tensor([[1.0]]))


def test_gin_isolated_node_is_plain_fnn():
    g = build_graph(1, [])
    out = gin_layer(Tensor([[1.5, 0.5]]), g, identity_fnn(2), "f")
    np.testing.assert_allclose(out.value, [[1.5, 0.5]])


def test_gin_zero_weights():
    store = ParameterStore()
    for k in range(2):
        store.add(f"f.{k}.weight", np.zeros((2, 2)))
        store.add(f"f.{k}.bias", np.zeros((1, 2)))
    out = gin_layer(Tensor(np.ones((3, 2))), path_graph(3), store.bind(), "f")
    np.testing.assert_array_equal(out.value, np.zeros((3, 2)))


def test_gin_path_neighborhood_sums(p3):
    out = gin_layer(Tensor(np.ones((3, 1))), p3, identity_fnn(1), "f")
    np.testing.assert_allclose(out.value, [[2.0], [3.0], [2.0]])


def test_sum_layer_is_unnormalized(p3):
    out = sum_layer(Tensor(np.ones((3, 1))), p3, Tensor([[1.0]]))
    np.testing.assert_allclose(out.value, [[2.0], [3.0], [2.0]])


# --- encode -----------------------------------------------------------------------------

def test_single_layer_encode_is_one_call(er12, rng):
    config = EncoderConfig(layer_kind="gcn", dims=(3, 5))
    store = encoder_params(config, 0)
    x = rng.standard_normal((12, 3))
    stack = encode(er12, x, store.bind(), config)
    assert stack.num_layers == 1
    np.testing.assert_array_equal(stack.layers[0].value, x)
    expected = gcn_layer(Tensor(x), er12, Tensor(store["encoder.0.weight"]))
    np.testing.assert_allclose(stack.final, expected.value)


def test_zero_features_give_zero_stack(er12):
    config = EncoderConfig(layer_kind="gcn", dims=(4, 6, 6))
    stack = encode(er12, np.zeros((12, 4)), encoder_params(config, 1).bind(), config)
    for layer in stack.layers[1:]:
        np.testing.assert_array_equal(layer.value, 0.0)


def test_encode_rejects_wrong_feature_width(er12):
    config = EncoderConfig(layer_kind="gcn", dims=(4, 6))
    with pytest.raises(ShapeError):
        encode(er12, np.zeros((12, 5)), encoder_params(config, 0).bind(), config)


def test_encode_rejects_wrong_row_count(er12):
    config = EncoderConfig(layer_kind="gin", dims=(4, 6))
    with pytest.raises(ShapeError):
        encode(er12, np.zeros((11, 4)), encoder_params(config, 0).bind(), config)


def test_encoder_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(layer_kind="gat", dims=(3, 4)).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(layer_kind="gcn", dims=(3,)).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(layer_kind="gcn", dims=(3, 0)).validate()


@pytest.mark.parametrize("kind", ["gcn", "gin", "sum"])
def test_permutation_equivariance(kind):
    rng = np.random.default_rng(42)
    config = EncoderConfig(layer_kind=kind, dims=(5, 8, 8))
    for trial in range(50):
        n = int(rng.integers(2, 31))
        g = erdos_renyi_graph(n, float(rng.uniform(0.05, 0.5)), seed=trial)
        p = Permutation.random(n, rng)
        x = rng.standard_normal((n, 5))
        params = encoder_params(config, trial).bind()

        original = encode(g, x, params, config)
        permuted = encode(permute_graph(g, p), p.apply_rows(x), params, config)
        for a, b in zip(original.layers, permuted.layers):
            np.testing.assert_allclose(p.apply_rows(a.value), b.value, rtol=0, atol=1e-9)


# --- isomorphic consistency -------------------------------------------------------------

def test_depth_separates_path_nodes(p5):
    config = EncoderConfig(layer_kind="gin", dims=(4, 16, 16))
    x = np.ones((5, 4))
    separated = 0
    for seed in range(100):
        stack = encode(p5, x, encoder_params(config, seed).bind(), config)
        h1, h2 = stack.layers[1].value, stack.layers[2].value
        np.testing.assert_allclose(h1[1], h1[2], rtol=0, atol=1e-9)
        if np.max(np.abs(h2[1] - h2[2])) > 1e-9:
            separated += 1
    assert separated >= 95


def test_equal_wl_colors_give_equal_embeddings():
    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(2, 13))
        g = erdos_renyi_graph(n, float(rng.uniform(0.1, 0.6)), seed=1000 + trial)
        num_layers = int(rng.integers(1, 4))
        config = EncoderConfig(layer_kind="gin", dims=(3,) + (6,) * num_layers)
        stack = encode(g, np.ones((n, 3)), encoder_params(config, trial).bind(), config)
        colors = wl_refine(g, rounds=num_layers).colors
        h = stack.final
        for u in range(n):
            for v in range(u + 1, n):
                if colors[u] == colors[v]:
                    np.testing.assert_allclose(h[u], h[v], rtol=0, atol=1e-9)
