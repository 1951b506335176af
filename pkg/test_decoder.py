"""
Tests for the inverse-GNN decoder and the three reconstruction losses.
"""
import math

import numpy as np
import pytest

from autodiff import RngState, Tensor
from config import EncoderConfig
from decoder import (
    LOG_SIGMA_BOUND,
    combine_losses,
    decode,
    init_decoder_params,
    kl_diag_gaussian,
    loss_deg,
    loss_nei,
    loss_self,
    neighborhood_posterior_mean,
    total_loss,
)
from encoder import encode, init_encoder_params
from errors import ConfigError, NumericalError
from graph_core import Permutation, build_graph, erdos_renyi_graph, permute_graph
from models import DecoderOutputs, EmbeddingStack


def model(g, input_dim=4, width=5, num_layers=2, seed=0, hidden=6, kind="gcn"):
    config = EncoderConfig(layer_kind=kind, dims=(input_dim,) + (width,) * num_layers)
    rng = np.random.default_rng(seed)
    store = init_encoder_params(config, rng)
    store.update(init_decoder_params(config, hidden, rng))
    return config, store


def zeroed(store):
    for _, value in store.items():
        value[...] = 0.0
    return store


def outputs_with(z, degree_pred=None):
    n_layers = len(z)
    z = [Tensor(v) for v in z]

    def zeros():
        return [Tensor(np.zeros_like(t.value)) for t in z]

    degree_pred = degree_pred or [np.zeros((z[0].shape[0], 1))] * n_layers
    return DecoderOutputs(
        mu=zeros(), log_sigma=zeros(), sigma=[Tensor(np.ones_like(t.value)) for t in z], z=z,
        prior_mean=zeros(), degree_pred=[Tensor(d) for d in degree_pred], noise=[None] * n_layers,
    )


# --- decode ---------------------------------------------------------------------------

def test_zero_weights_give_pure_noise(er12, rng):
    config, store = model(er12)
    x = rng.standard_normal((12, 4))
    stack = encode(er12, x, store.bind(), config)
    for name in store.names("decoder"):
        store[name][...] = 0.0

    outputs = decode(stack, store.bind(), rng=RngState(seed=3))
    for l in range(2):
        np.testing.assert_array_equal(outputs.mu[l].value, 0.0)
        np.testing.assert_array_equal(outputs.prior_mean[l].value, 0.0)
        np.testing.assert_array_equal(outputs.sigma[l].value, 1.0)
        np.testing.assert_array_equal(outputs.z[l].value, outputs.noise[l])


def test_decode_is_deterministic_per_state(er12, rng):
    config, store = model(er12)
    stack = encode(er12, rng.standard_normal((12, 4)), store.bind(), config)
    a = decode(stack, store.bind(), rng=RngState(seed=9))
    b = decode(stack, store.bind(), rng=RngState(seed=9))
    for l in range(2):
        np.testing.assert_array_equal(a.z[l].value, b.z[l].value)


def test_prior_depends_on_upper_noise(rng):
    g = erdos_renyi_graph(6, 0.5, seed=2)
    config, store = model(g)
    stack = encode(g, rng.standard_normal((6, 4)), store.bind(), config)
    noise = [rng.standard_normal((6, 4)), rng.standard_normal((6, 5))]
    base = decode(stack, store.bind(), noise=noise)
    changed = decode(stack, store.bind(), noise=[noise[0], noise[1] + 1.0])
    assert not np.allclose(base.prior_mean[0].value, changed.prior_mean[0].value)
    np.testing.assert_array_equal(base.prior_mean[1].value, 0.0)


def test_decoder_output_invariants(er12, rng):
    config, store = model(er12)
    stack = encode(er12, rng.standard_normal((12, 4)) * 50, store.bind(), config)
    outputs = decode(stack, store.bind(), rng=RngState(seed=1))
    for l in range(2):
        assert np.all(outputs.sigma[l].value > 0)
        assert np.all(outputs.degree_pred[l].value >= 0)
        assert np.all(np.abs(outputs.log_sigma[l].value) <= LOG_SIGMA_BOUND)
        assert outputs.z[l].shape == (12, config.dims[l])


def test_initial_sigma_is_one(er12, rng):
    config, store = model(er12, kind="gin")
    stack = encode(er12, rng.standard_normal((12, 4)) * 50, store.bind(), config)
    outputs = decode(stack, store.bind(), rng=RngState(seed=1))
    for l in range(2):
        np.testing.assert_array_equal(outputs.log_sigma[l].value, 0.0)
        np.testing.assert_array_equal(outputs.sigma[l].value, 1.0)


def test_mean_path_has_no_noise(er12, rng):
    config, store = model(er12)
    stack = encode(er12, rng.standard_normal((12, 4)), store.bind(), config)
    outputs = decode(stack, store.bind(), sample=False)
    for l in range(2):
        expected = outputs.prior_mean[l].value + outputs.mu[l].value
        np.testing.assert_allclose(outputs.z[l].value, expected)


# --- loss_self ---------------------------------------------------------------------------

def test_self_loss_perfect_reconstruction(rng):
    h = [rng.standard_normal((4, 3)), rng.standard_normal((4, 2)), rng.standard_normal((4, 2))]
    stack = EmbeddingStack(layers=[Tensor(v) for v in h])
    assert loss_self(stack, outputs_with(h[:2])).item() == 0.0


def test_self_loss_single_node():
    stack = EmbeddingStack(layers=[Tensor([[1.0, 2.0]]), Tensor([[0.0]])])
    assert loss_self(stack, outputs_with([np.zeros((1, 2))])).item() == pytest.approx(5.0)


def test_self_loss_matches_loop(rng):
    h = [rng.standard_normal((8, 3)), rng.standard_normal((8, 4)), rng.standard_normal((8, 4))]
    z = [rng.standard_normal((8, 3)), rng.standard_normal((8, 4))]
    expected = 0.0
    for l in range(2):
        for i in range(8):
            for c in range(h[l].shape[1]):
                expected += (h[l][i, c] - z[l][i, c]) ** 2
    stack = EmbeddingStack(layers=[Tensor(v) for v in h])
    assert loss_self(stack, outputs_with(z)).item() == pytest.approx(expected, abs=1e-10)


# --- neighborhood mean and KL ------------------------------------------------------------

def test_neighborhood_mean_isolated_node():
    out = neighborhood_posterior_mean(np.array([[3.0, -1.0]]), build_graph(1, []))
    np.testing.assert_array_equal(out.value, [[3.0, -1.0]])


def test_neighborhood_mean_triangle(triangle, rng):
    h = rng.standard_normal((3, 2))
    out = neighborhood_posterior_mean(h, triangle)
    np.testing.assert_allclose(out.value, np.tile(h.mean(axis=0), (3, 1)))


def test_neighborhood_mean_path(p3, rng):
    h = rng.standard_normal((3, 2))
    out = neighborhood_posterior_mean(h, p3).value
    np.testing.assert_allclose(out[1], h.mean(axis=0))
    np.testing.assert_allclose(out[0], (h[0] + h[1]) / 2)


def test_kl_identical_is_zero(rng):
    mu, sigma = rng.standard_normal((3, 4)), rng.uniform(0.5, 2.0, (3, 4))
    kl = kl_diag_gaussian(mu, sigma, mu, sigma).value
    np.testing.assert_allclose(kl, 0.0, atol=1e-12)


def test_kl_shifted_mean():
    kl = kl_diag_gaussian([[1.0, 0.0]], [[1.0, 1.0]], [[0.0, 0.0]], [[1.0, 1.0]])
    assert kl.item() == pytest.approx(0.5)


def test_kl_wider_q():
    kl = kl_diag_gaussian([[0.0]], [[2.0]], [[0.0]], [[1.0]])
    assert kl.item() == pytest.approx(0.5 * (4.0 - 2.0 * math.log(2.0) - 1.0))
    assert kl.item() == pytest.approx(0.80685, abs=1e-5)


def test_kl_rejects_non_positive_sigma():
    with pytest.raises(NumericalError):
        kl_diag_gaussian([[0.0]], [[0.0]], [[0.0]], [[1.0]])


def test_kl_is_non_negative(rng):
    for _ in range(50):
        args = (rng.standard_normal((2, 3)), rng.uniform(0.1, 3, (2, 3)),
                rng.standard_normal((2, 3)), rng.uniform(0.1, 3, (2, 3)))
        assert np.all(kl_diag_gaussian(*args).value >= -1e-12)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        mu_q, mu_p = rng.normal(0, 0.5, 2), rng.normal(0, 0.5, 2)
        sigma_q, sigma_p = rng.uniform(0.6, 1.4, 2), rng.uniform(0.6, 1.4, 2)
        samples = mu_q + sigma_q * rng.standard_normal((1_000_000, 2))
        log_q = -np.log(sigma_q) - 0.5 * ((samples - mu_q) / sigma_q) ** 2
        log_p = -np.log(sigma_p) - 0.5 * ((samples - mu_p) / sigma_p) ** 2
        estimate = float(np.mean(np.sum(log_q - log_p, axis=1)))
        closed = kl_diag_gaussian([mu_q], [sigma_q], [mu_p], [sigma_p]).item()
        assert closed == pytest.approx(estimate, abs=0.01)


# --- loss_nei / loss_deg / total ----------------------------------------------------------

def test_nei_loss_zero_when_q_matches_target(er12, rng):
    h = [rng.standard_normal((12, 3)), rng.standard_normal((12, 3))]
    stack = EmbeddingStack(layers=[Tensor(v) for v in h])
    target = neighborhood_posterior_mean(h[0], er12).value
    outputs = outputs_with([target])
    outputs.mu[0] = Tensor(target)
    outputs.z[0] = Tensor(target)
    assert loss_nei(outputs, stack, er12).item() == pytest.approx(0.0, abs=1e-12)


def test_nei_loss_zero_at_all_zero_point(er12):
    config, store = model(er12)
    zeroed(store)
    stack = encode(er12, np.zeros((12, 4)), store.bind(), config)
    outputs = decode(stack, store.bind(), sample=False)
    assert loss_nei(outputs, stack, er12).item() == 0.0


def test_nei_loss_matches_row_loop(rng):
    g = erdos_renyi_graph(8, 0.4, seed=5)
    config, store = model(g, input_dim=3, width=4)
    stack = encode(g, rng.standard_normal((8, 3)), store.bind(), config)
    outputs = decode(stack, store.bind(), rng=RngState(seed=4))
    expected = 0.0
    for l in range(2):
        target = neighborhood_posterior_mean(stack.layers[l], g).value
        q_mean = outputs.prior_mean[l].value + outputs.mu[l].value
        sigma = outputs.sigma[l].value
        for i in range(8):
            expected += kl_diag_gaussian([q_mean[i]], [sigma[i]], [target[i]], [np.ones_like(sigma[i])]).item()
    assert loss_nei(outputs, stack, g).item() == pytest.approx(expected, abs=1e-10)


def test_degree_loss_exact_prediction(p3):
    outputs = outputs_with([np.zeros((3, 1))] * 2, degree_pred=[np.array([[1.0], [2.0], [1.0]])] * 2)
    assert loss_deg(p3, outputs).item() == 0.0


def test_degree_loss_same_target_each_layer():
    g = build_graph(4, [(0, 1), (0, 2), (0, 3)])
    preds = [np.array([[2.5], [1.0], [1.0], [1.0]]), np.array([[3.5], [1.0], [1.0], [1.0]])]
    outputs = outputs_with([np.zeros((4, 1))] * 2, degree_pred=preds)
    assert loss_deg(g, outputs).item() == pytest.approx(0.5)


def test_degree_loss_matches_loop(rng):
    g = erdos_renyi_graph(9, 0.4, seed=8)
    preds = [rng.uniform(0, 4, (9, 1)) for _ in range(3)]
    expected = sum((g.degrees[i] - p[i, 0]) ** 2 for p in preds for i in range(9))
    outputs = outputs_with([np.zeros((9, 1))] * 3, degree_pred=preds)
    assert loss_deg(g, outputs).item() == pytest.approx(expected, abs=1e-10)


def test_combine_arithmetic():
    breakdown = combine_losses(Tensor([[1.0]]), Tensor([[2.0]]), Tensor([[3.0]]), 0.1, 1.0)
    assert breakdown.total == pytest.approx(4.2)
    assert breakdown.tensor.item() == pytest.approx(4.2)


def test_combine_rejects_non_finite_lambda():
    with pytest.raises(ConfigError):
        combine_losses(Tensor([[1.0]]), Tensor([[1.0]]), Tensor([[1.0]]), float("nan"), 1.0)


def test_ablated_total_is_self_loss(er12, rng):
    config, store = model(er12)
    stack = encode(er12, rng.standard_normal((12, 4)), store.bind(), config)
    outputs = decode(stack, store.bind(), rng=RngState(seed=0))
    breakdown = total_loss(stack, outputs, er12, lambda_nei=0.0, lambda_deg=0.0)
    assert breakdown.total == breakdown.l_self


def test_total_increases_with_lambda_deg(er12, rng):
    config, store = model(er12)
    stack = encode(er12, rng.standard_normal((12, 4)), store.bind(), config)
    outputs = decode(stack, store.bind(), rng=RngState(seed=0))
    low = total_loss(stack, outputs, er12, lambda_deg=1.0)
    high = total_loss(stack, outputs, er12, lambda_deg=2.0)
    assert low.l_deg > 0
    assert high.total > low.total


@pytest.mark.parametrize("kind", ["gcn", "gin"])
def test_loss_is_permutation_invariant(kind):
    rng = np.random.default_rng(11)
    for trial in range(50):
        n = int(rng.integers(2, 31))
        g = erdos_renyi_graph(n, float(rng.uniform(0.05, 0.5)), seed=trial)
        config, store = model(g, kind=kind, seed=trial)
        p = Permutation.random(n, rng)
        x = rng.standard_normal((n, 4))
        noise = [rng.standard_normal((n, 4)), rng.standard_normal((n, 5))]
        params = store.bind()

        stack = encode(g, x, params, config)
        original = total_loss(stack, decode(stack, params, noise=noise), g)

        pg = permute_graph(g, p)
        pstack = encode(pg, p.apply_rows(x), params, config)
        permuted = total_loss(pstack, decode(pstack, params, noise=[p.apply_rows(e) for e in noise]), pg)
        assert permuted.total == pytest.approx(original.total, abs=1e-9, rel=0)
