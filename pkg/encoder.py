"""
GNN encoder.

Layer kinds:
    gcn - relu(D̃^-1/2 (A+I) D̃^-1/2 H W), symmetric normalization with implicit self-loop
    gin - FNN((A+I) H), two affine layers with relu between, epsilon fixed to 0
    sum - relu((A+I) H W), the unnormalized weighted-sum form with all weights 1
"""
import logging
from typing import Mapping

import numpy as np

from autodiff import Tensor, as_tensor, matmul, relu, sparse_dense_matmul
from config import EncoderConfig
from errors import ShapeError
from graph_core import Graph
from models import EmbeddingStack
from parameters import ParameterStore, fnn_forward, init_fnn, scaled_uniform

logger = logging.getLogger(__name__)


def _check_rows(h: Tensor, g: Graph, op: str) -> None:
    if h.shape[0] != g.node_count:
        raise ShapeError(f"{op}: {h.shape[0]} embedding rows for a graph with {g.node_count} nodes")


def gcn_layer(h: Tensor, g: Graph, w: Tensor) -> Tensor:
    """
    One GCN layer.

    Args:
        h: N x C_l embeddings
        g: Graph
        w: C_l x C_{l+1} weight

    Returns:
        N x C_{l+1} embeddings
    """
    h, w = as_tensor(h), as_tensor(w)
    _check_rows(h, g, "gcn_layer")
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"gcn_layer: embeddings {h.shape} do not match weight {w.shape}")
    return relu(matmul(sparse_dense_matmul(g.gcn_operator, h), w))


def sum_layer(h: Tensor, g: Graph, w: Tensor) -> Tensor:
    """GCN-shaped layer with unit self and neighbor weights."""
    h, w = as_tensor(h), as_tensor(w)
    _check_rows(h, g, "sum_layer")
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"sum_layer: embeddings {h.shape} do not match weight {w.shape}")
    return relu(matmul(sparse_dense_matmul(g.gin_operator, h), w))


def gin_layer(h: Tensor, g: Graph, fnn_params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """
    One GIN layer: FNN(h_i + Σ_j h_j).

    Args:
        h: N x C_l embeddings
        g: Graph
        fnn_params: Parameter tensors
        prefix: Name prefix of this layer's FNN

    Returns:
        N x C_{l+1} embeddings
    """
    h = as_tensor(h)
    _check_rows(h, g, "gin_layer")
    first = fnn_params[f"{prefix}.0.weight"]
    if h.shape[1] != first.shape[0]:
        raise ShapeError(f"gin_layer: embeddings {h.shape} do not match FNN input {first.shape}")
    return fnn_forward(sparse_dense_matmul(g.gin_operator, h), fnn_params, prefix)


def layer_prefix(l: int) -> str:
    return f"encoder.{l}"


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> ParameterStore:
    """Scaled-uniform weights (zero biases for GIN FNNs)."""
    config.validate()
    store = ParameterStore()
    for l in range(config.num_layers):
        c_in, c_out = config.dims[l], config.dims[l + 1]
        if config.layer_kind == "gin":
            init_fnn(store, f"{layer_prefix(l)}.fnn", (c_in, c_out, c_out), rng)
        else:
            store.add(f"{layer_prefix(l)}.weight", scaled_uniform(c_in, c_out, rng))
    return store


def encode(
    g: Graph,
    x,
    params: Mapping[str, Tensor],
    config: EncoderConfig,
) -> EmbeddingStack:
    """
    Run the L-layer encoder.

    Args:
        g: Graph
        x: N x C_0 input features
        params: Bound parameter tensors (see ParameterStore.bind)
        config: Encoder shape

    Returns:
        EmbeddingStack [H^(0) = x, H^(1), ..., H^(L)]
    """
    x = as_tensor(x)
    _check_rows(x, g, "encode")
    if x.shape[1] != config.input_dim:
        raise ShapeError(
            f"encode: features have {x.shape[1]} columns, encoder expects {config.input_dim}"
        )

    layers = [x]
    h = x
    for l in range(config.num_layers):
        prefix = layer_prefix(l)
        if config.layer_kind == "gin":
            h = gin_layer(h, g, params, f"{prefix}.fnn")
        elif config.layer_kind == "sum":
            h = sum_layer(h, g, params[f"{prefix}.weight"])
        else:
            h = gcn_layer(h, g, params[f"{prefix}.weight"])
        if h.shape[1] != config.dims[l + 1]:
            raise ShapeError(
                f"encode: layer {l} produced width {h.shape[1]}, config expects {config.dims[l + 1]}"
            )
        layers.append(h)

    logger.debug(f"Encoded {g.node_count} nodes through {config.num_layers} {config.layer_kind} layers")
    return EmbeddingStack(layers=layers)
