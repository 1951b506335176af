"""
Unsupervised training loop.
Encode, decode, total loss, backward and one Adam step per epoch,
until the loss plateaus or max_epochs is reached.
"""
import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from autodiff import ComputationTape, RngState, Tensor, backward
from config import TrainConfig
from decoder import decode, init_decoder_params, total_loss
from encoder import encode, init_encoder_params
from errors import ShapeError, TrainingDivergedError
from graph_core import Graph, disjoint_union
from models import DecoderOutputs, EmbeddingStack, LossBreakdown, TrainReport
from optimizer import AdamState, adam_step
from parameters import ParameterStore

logger = logging.getLogger(__name__)

LOSS_LOGGER_NAME = "loss_log"
SILENT_LOSS_LOGGER_NAME = f"{LOSS_LOGGER_NAME}.silent"

EpochCallback = Callable[[int, ParameterStore, LossBreakdown, RngState], None]


def setup_loss_logging(log_file: Optional[Path] = None, header: Optional[str] = None) -> logging.Logger:
    """
    Logger for the per-epoch loss stream.

    Records go only to `log_file` (not to the console); one record per epoch,
    preceded by `header` when given. Without a file the records go to a
    separate silent logger and the shared one is left untouched.
    """
    if log_file is None:
        silent = logging.getLogger(SILENT_LOSS_LOGGER_NAME)
        silent.propagate = False
        if not silent.handlers:
            silent.addHandler(logging.NullHandler())
        return silent

    loss_logger = logging.getLogger(LOSS_LOGGER_NAME)
    loss_logger.setLevel(logging.INFO)
    loss_logger.propagate = False

    for handler in list(loss_logger.handlers):
        loss_logger.removeHandler(handler)
        handler.close()

    log_file = Path(log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_file, mode="w")
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(logging.Formatter(
        "%(asctime)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    ))
    loss_logger.addHandler(file_handler)

    if header:
        loss_logger.info(header)
    return loss_logger


def format_loss_record(epoch: int, breakdown: LossBreakdown) -> str:
    return (
        f"epoch={epoch} | "
        f"l_self={breakdown.l_self:.17g} | "
        f"l_nei={breakdown.l_nei:.17g} | "
        f"l_deg={breakdown.l_deg:.17g} | "
        f"total={breakdown.total:.17g}"
    )


def parse_loss_log(log_file: Path) -> pd.DataFrame:
    """Read the epoch records of a loss log back into a DataFrame."""
    rows = []
    with open(log_file, "r") as f:
        for line in f:
            fields = {}
            for part in line.strip().split(" | "):
                if "=" in part:
                    key, value = part.split("=", 1)
                    fields[key.strip()] = value.strip()
            if "epoch" in fields:
                rows.append({
                    "epoch": int(fields["epoch"]),
                    "l_self": float(fields["l_self"]),
                    "l_nei": float(fields["l_nei"]),
                    "l_deg": float(fields["l_deg"]),
                    "total": float(fields["total"]),
                })
    return pd.DataFrame(rows, columns=["epoch", "l_self", "l_nei", "l_deg", "total"])


def has_converged(
    history: Sequence[Union[LossBreakdown, float]],
    tolerance: float,
    patience: int,
) -> bool:
    """
    Loss-plateau test.

    True once the best total loss has gone `patience` consecutive epochs
    without a relative improvement larger than `tolerance`.
    """
    if not history:
        raise ValueError("has_converged needs a nonempty history")
    totals = [h.total if isinstance(h, LossBreakdown) else float(h) for h in history]

    best = totals[0]
    stale = 0
    for value in totals[1:]:
        if value < best - tolerance * abs(best):
            stale = 0
        else:
            stale += 1
        best = min(best, value)
    return stale >= patience


def init_model_params(config: TrainConfig) -> ParameterStore:
    """Encoder then decoder parameters from one seeded stream."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    store = init_encoder_params(config.encoder, rng)
    store.update(init_decoder_params(config.encoder, config.decoder_hidden, rng))
    return store


def model_loss(
    g: Graph,
    x: np.ndarray,
    params,
    config: TrainConfig,
    rng: Optional[RngState] = None,
    noise: Optional[Sequence[np.ndarray]] = None,
    sample: bool = True,
) -> Tuple[EmbeddingStack, DecoderOutputs, LossBreakdown]:
    """One forward pass: encode, decode and the λ-weighted loss.

    With sample=False (and no explicit noise) the decoder uses the mean path z = μ̃ + μ.
    """
    stack = encode(g, x, params, config.encoder)
    outputs = decode(stack, params, rng=rng, noise=noise, sample=sample)
    breakdown = total_loss(stack, outputs, g, config.lambda_nei, config.lambda_deg)
    return stack, outputs, breakdown


def _as_batch(graphs, features) -> Tuple[Graph, np.ndarray, Optional[np.ndarray], bool]:
    """Single graph, or a list merged into one disjoint union."""
    if isinstance(graphs, Graph):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != graphs.node_count:
            raise ShapeError(f"Features of shape {x.shape} do not match {graphs.node_count} nodes")
        return graphs, x, None, True

    graphs = list(graphs)
    features = [np.asarray(f, dtype=np.float64) for f in features]
    if len(graphs) != len(features):
        raise ShapeError(f"{len(graphs)} graphs but {len(features)} feature matrices")
    if not graphs:
        raise ShapeError("Cannot train on an empty graph list")
    widths = {f.shape[1] for f in features}
    if len(widths) != 1:
        raise ShapeError(f"Feature widths differ across graphs: {sorted(widths)}")
    for k, (g, f) in enumerate(zip(graphs, features)):
        if f.shape[0] != g.node_count:
            raise ShapeError(f"Graph {k}: {f.shape[0]} feature rows for {g.node_count} nodes")
    union, offsets = disjoint_union(graphs)
    return union, np.vstack(features), offsets, False


def _split_stack(stack: EmbeddingStack, offsets: np.ndarray) -> List[EmbeddingStack]:
    return [
        EmbeddingStack(layers=[Tensor(t.value[offsets[k]:offsets[k + 1]]) for t in stack.layers])
        for k in range(len(offsets) - 1)
    ]


def embed(
    graphs,
    features,
    params: ParameterStore,
    config: TrainConfig,
):
    """
    Noise-free embeddings from trained parameters.

    Returns:
        EmbeddingStack for a single graph, or one per graph for a list
    """
    g, x, offsets, single = _as_batch(graphs, features)
    stack = encode(g, x, params.bind(), config.encoder)
    stack = EmbeddingStack(layers=[Tensor(t.value) for t in stack.layers])
    return stack if single else _split_stack(stack, offsets)


def train_unsupervised(
    graphs,
    features,
    config: TrainConfig,
    params: Optional[ParameterStore] = None,
    log_file: Optional[Path] = None,
    on_epoch: Optional[EpochCallback] = None,
    sample: bool = True,
    log_header: Optional[str] = None,
):
    """
    Train the encoder and decoder without labels.

    Args:
        graphs: One Graph, or a list of Graphs (the loss is then summed over graphs)
        features: Matching feature matrix, or list of matrices
        config: Training settings
        params: Starting parameters (fresh seeded init when None)
        log_file: Where to write the per-epoch loss records
        on_epoch: Called as on_epoch(epoch, params, breakdown, rng) after each step
        sample: Draw reparameterization noise; False trains on the mean path
        log_header: First record of the loss log (e.g. the effective config)

    Returns:
        (params, embeddings, report); embeddings mirror the `graphs` argument

    Raises:
        TrainingDivergedError: Total loss became NaN or infinite
    """
    config.validate()
    g, x, offsets, single = _as_batch(graphs, features)

    store = params if params is not None else init_model_params(config)
    noise_rng = RngState(seed=config.seed)
    adam = AdamState(learning_rate=config.learning_rate)
    loss_logger = setup_loss_logging(log_file, header=log_header)

    logger.info(
        f"Training {config.encoder.layer_kind} encoder dims={config.encoder.dims} "
        f"on {g.node_count} nodes / {g.edge_count} edges "
        f"(λ_nei={config.lambda_nei}, λ_deg={config.lambda_deg}, κ={config.learning_rate})"
    )

    history: List[LossBreakdown] = []
    stop_reason = "max_epochs"
    report_every = max(1, config.max_epochs // 10)

    for epoch in range(1, config.max_epochs + 1):
        with ComputationTape() as tape:
            bound = store.bind()
            _, _, breakdown = model_loss(g, x, bound, config, rng=noise_rng, sample=sample)

        if not math.isfinite(breakdown.total):
            raise TrainingDivergedError(epoch, breakdown.total)

        grads = backward(tape, breakdown.tensor, bound)
        adam_step(store, grads, adam)

        breakdown.tensor = None
        history.append(breakdown)
        loss_logger.info(format_loss_record(epoch, breakdown))
        if on_epoch is not None:
            on_epoch(epoch, store, breakdown, noise_rng)

        if epoch % report_every == 0 or epoch == 1:
            logger.info(
                f"Epoch {epoch}/{config.max_epochs}: total={breakdown.total:.6f} "
                f"(self={breakdown.l_self:.4f}, nei={breakdown.l_nei:.4f}, deg={breakdown.l_deg:.4f})"
            )

        if has_converged(history, config.tolerance, config.patience):
            stop_reason = "converged"
            logger.info(f"Loss plateaued at epoch {epoch}")
            break

    report = TrainReport(
        history=history, epochs=len(history), stop_reason=stop_reason, rng=noise_rng.copy()
    )
    stack = encode(g, x, store.bind(), config.encoder)
    stack = EmbeddingStack(layers=[Tensor(t.value) for t in stack.layers])
    embeddings = stack if single else _split_stack(stack, offsets)
    return store, embeddings, report
