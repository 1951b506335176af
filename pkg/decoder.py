"""
Inverse-GNN decoder and reconstruction losses.

Walking from the top encoder layer down, each decoder layer l reads the
aggregated embedding H^(l+1) and reconstructs three things about layer l:
the self-embedding (as a reparameterized Normal sample), the neighborhood
distribution (matched by KL against an identity-covariance Normal centered on
the closed-neighborhood mean of H^(l)), and the node degree.
"""
import logging
import math
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np

from autodiff import (
    RngState,
    Tensor,
    add,
    as_tensor,
    clip,
    elementwise_mul,
    exp,
    log,
    relu,
    row_sum,
    sample_standard_normal,
    scale,
    sparse_dense_matmul,
    square,
    squared_frobenius,
    sub,
    sum as tensor_sum,
)
from config import EncoderConfig
from errors import ConfigError, NumericalError, ShapeError
from graph_core import Graph
from models import DecoderOutputs, EmbeddingStack, LossBreakdown
from parameters import ParameterStore, fnn_forward, init_fnn

logger = logging.getLogger(__name__)

LOG_SIGMA_BOUND = 10.0
HEADS = ("mu", "sigma", "degree", "prior")


def head_prefix(l: int, head: str) -> str:
    return f"decoder.{l}.{head}"


def init_decoder_params(
    config: EncoderConfig, hidden: int, rng: np.random.Generator
) -> ParameterStore:
    """
    FNN_mu, FNN_sigma, FNN_d for every layer and FNN_z for layers 1..L-1.

    FNN_z^(l) maps z^(l) (width C_l) to the prior mean of layer l-1, so layer 0
    has none. The output layer of FNN_sigma starts at zero, so sigma = 1 at init.
    """
    store = ParameterStore()
    dims = config.dims
    for l in range(config.num_layers):
        c_l, c_next = dims[l], dims[l + 1]
        init_fnn(store, head_prefix(l, "mu"), (c_next, hidden, c_l), rng)
        init_fnn(store, head_prefix(l, "sigma"), (c_next, hidden, c_l), rng)
        store[f"{head_prefix(l, 'sigma')}.1.weight"][...] = 0.0
        init_fnn(store, head_prefix(l, "degree"), (c_next, hidden, 1), rng)
        if l >= 1:
            init_fnn(store, head_prefix(l, "prior"), (c_l, hidden, dims[l - 1]), rng)
    return store


def _check_decoder_shapes(stack: EmbeddingStack, params: Mapping[str, Tensor]) -> None:
    for l in range(stack.num_layers):
        key = f"{head_prefix(l, 'mu')}.0.weight"
        if key not in params:
            raise ShapeError(f"decode: no decoder parameters for layer {l} ('{key}' missing)")
        width_in = params[key].shape[0]
        width_next = stack.layers[l + 1].shape[1]
        if width_in != width_next:
            raise ShapeError(
                f"decode: layer {l} FNN expects width {width_in}, H^({l + 1}) has width {width_next}"
            )


def decode(
    stack: EmbeddingStack,
    params: Mapping[str, Tensor],
    rng: Optional[RngState] = None,
    noise: Optional[Sequence[np.ndarray]] = None,
    sample: bool = True,
) -> DecoderOutputs:
    """
    Top-down decoder pass (l = L-1, ..., 0).

    Args:
        stack: Encoder output H^(0..L)
        params: Bound decoder parameter tensors
        rng: Generator state for the reparameterization noise; one draw per layer,
            taken in top-down order
        noise: Explicit per-layer noise (indexed by l); overrides rng
        sample: When False (and no noise given) z is the mean μ̃ + μ

    Returns:
        DecoderOutputs with lists indexed by layer
    """
    L = stack.num_layers
    _check_decoder_shapes(stack, params)
    if noise is not None and len(noise) != L:
        raise ShapeError(f"decode: got noise for {len(noise)} layers, encoder has {L}")
    if noise is None and sample and rng is None:
        raise ValueError("decode: sampling requires an RngState (or explicit noise)")

    n = stack.layers[0].shape[0]
    mu: List[Optional[Tensor]] = [None] * L
    log_sigma: List[Optional[Tensor]] = [None] * L
    sigma: List[Optional[Tensor]] = [None] * L
    z: List[Optional[Tensor]] = [None] * L
    prior_mean: List[Optional[Tensor]] = [None] * L
    degree_pred: List[Optional[Tensor]] = [None] * L
    used_noise: List[Optional[np.ndarray]] = [None] * L

    prior = Tensor(np.zeros((n, stack.layers[L - 1].shape[1])))
    for l in reversed(range(L)):
        h_next = stack.layers[l + 1]
        c_l = stack.layers[l].shape[1]

        mu[l] = fnn_forward(h_next, params, head_prefix(l, "mu"))
        log_sigma[l] = clip(
            fnn_forward(h_next, params, head_prefix(l, "sigma")), -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND
        )
        sigma[l] = exp(log_sigma[l])
        degree_pred[l] = relu(fnn_forward(h_next, params, head_prefix(l, "degree")))

        if noise is not None:
            eps = np.asarray(noise[l], dtype=np.float64)
            if eps.shape != (n, c_l):
                raise ShapeError(f"decode: noise for layer {l} has shape {eps.shape}, expected {(n, c_l)}")
        elif sample:
            eps = sample_standard_normal((n, c_l), rng).value
        else:
            eps = np.zeros((n, c_l))
        used_noise[l] = eps

        prior_mean[l] = prior
        z[l] = add(add(prior, mu[l]), elementwise_mul(sigma[l], eps))
        if l >= 1:
            prior = fnn_forward(z[l], params, head_prefix(l, "prior"))

    return DecoderOutputs(
        mu=mu,
        log_sigma=log_sigma,
        sigma=sigma,
        z=z,
        prior_mean=prior_mean,
        degree_pred=degree_pred,
        noise=used_noise,
    )


def loss_self(stack: EmbeddingStack, outputs: DecoderOutputs) -> Tensor:
    """Σ_l ||H^(l) - Z^(l)||² over l = 0..L-1."""
    terms = [squared_frobenius(stack.layers[l], outputs.z[l]) for l in range(outputs.num_layers)]
    return _sum_terms(terms)


def neighborhood_posterior_mean(h_l, g: Graph) -> Tensor:
    """Row i = (h_i + Σ_{j∈N(i)} h_j) / (d_i + 1)."""
    h_l = as_tensor(h_l)
    if h_l.shape[0] != g.node_count:
        raise ShapeError(
            f"neighborhood_posterior_mean: {h_l.shape[0]} rows for {g.node_count} nodes"
        )
    return sparse_dense_matmul(g.mean_operator, h_l)


ArrayOrTensor = Union[Tensor, np.ndarray]


def kl_diag_gaussian(
    mu_q: ArrayOrTensor,
    sigma_q: ArrayOrTensor,
    mu_p: ArrayOrTensor,
    sigma_p: ArrayOrTensor,
) -> Tensor:
    """
    Row-wise KL[N(mu_q, diag sigma_q²) || N(mu_p, diag sigma_p²)].

    Returns:
        N x 1 tensor: ½ Σ_d [(μq-μp)²/σp² + σq²/σp² + 2(ln σp - ln σq) - 1]

    Raises:
        NumericalError: Any standard deviation <= 0
    """
    mu_q, sigma_q, mu_p, sigma_p = (as_tensor(t) for t in (mu_q, sigma_q, mu_p, sigma_p))
    shape = mu_q.shape
    for name, t in (("sigma_q", sigma_q), ("mu_p", mu_p), ("sigma_p", sigma_p)):
        if t.shape != shape:
            raise ShapeError(f"kl_diag_gaussian: {name} has shape {t.shape}, mu_q has {shape}")
    for name, t in (("sigma_q", sigma_q), ("sigma_p", sigma_p)):
        if np.any(t.value <= 0):
            raise NumericalError(f"kl_diag_gaussian: {name} must be strictly positive")

    log_ratio = sub(log(sigma_q), log(sigma_p))  # ln σq - ln σp
    mean_term = elementwise_mul(square(sub(mu_q, mu_p)), exp(scale(log(sigma_p), -2.0)))
    var_term = exp(scale(log_ratio, 2.0))
    inner = sub(add(add(mean_term, var_term), scale(log_ratio, -2.0)), np.ones(shape))
    return scale(row_sum(inner), 0.5)


def loss_nei(outputs: DecoderOutputs, stack: EmbeddingStack, g: Graph) -> Tensor:
    """
    Σ_l Σ_i KL[N(μ̃+μ, diag σ²) || N(m^(l), I)], m^(l) the closed-neighborhood mean of H^(l).
    """
    terms = []
    for l in range(outputs.num_layers):
        target = neighborhood_posterior_mean(stack.layers[l], g)
        q_mean = add(outputs.prior_mean[l], outputs.mu[l])
        kl = kl_diag_gaussian(q_mean, outputs.sigma[l], target, np.ones(target.shape))
        terms.append(tensor_sum(kl))
    return _sum_terms(terms)


def loss_deg(g: Graph, outputs: DecoderOutputs) -> Tensor:
    """Σ_l Σ_i (d_i - d̂_i^(l))², the same true degree at every layer."""
    target = g.degrees.astype(np.float64).reshape(-1, 1)
    terms = [squared_frobenius(target, outputs.degree_pred[l]) for l in range(len(outputs.degree_pred))]
    return _sum_terms(terms)


def _sum_terms(terms: List[Tensor]) -> Tensor:
    if not terms:
        return Tensor(np.zeros((1, 1)))
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def combine_losses(
    l_self: Tensor, l_nei: Tensor, l_deg: Tensor, lambda_nei: float, lambda_deg: float
) -> LossBreakdown:
    """λ-weighted total of already computed components."""
    for name, value in (("lambda_nei", lambda_nei), ("lambda_deg", lambda_deg)):
        if not math.isfinite(value):
            raise ConfigError(f"{name} must be finite, got {value}")
    total = add(add(l_self, scale(l_nei, lambda_nei)), scale(l_deg, lambda_deg))
    s, nb, d = l_self.item(), l_nei.item(), l_deg.item()
    return LossBreakdown(
        l_self=s,
        l_nei=nb,
        l_deg=d,
        total=s + lambda_nei * nb + lambda_deg * d,
        lambda_nei=lambda_nei,
        lambda_deg=lambda_deg,
        tensor=total,
    )


def total_loss(
    stack: EmbeddingStack,
    outputs: DecoderOutputs,
    g: Graph,
    lambda_nei: float = 0.1,
    lambda_deg: float = 1.0,
) -> LossBreakdown:
    """
    L = L_self + λ_nei·L_nei + λ_deg·L_deg.

    The returned breakdown carries the differentiable total in `.tensor`.
    """
    return combine_losses(
        loss_self(stack, outputs),
        loss_nei(outputs, stack, g),
        loss_deg(g, outputs),
        lambda_nei,
        lambda_deg,
    )
