"""
Downstream evaluation.

Frozen embeddings feed small MLP heads (node and graph classification)
or inner-product scores (link prediction). Also holds the split
generators and the ablation / λ-sensitivity drivers.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from autodiff import ComputationTape, Tensor, backward, softmax_cross_entropy
from config import HeadConfig, RunConfig
from data_io import tu_features
from errors import ConfigError, GraphError
from graph_core import Graph, build_graph
from models import (
    CitationDataset,
    EmbeddingStack,
    GraphSplit,
    LinkSplit,
    NodeSplit,
    TuDataset,
)
from optimizer import AdamState, adam_step
from parameters import ParameterStore, fnn_forward, init_fnn
from training import train_unsupervised

logger = logging.getLogger(__name__)

HEAD_PREFIX = "head"

ABLATION_VARIANTS: Dict[str, Dict[str, float]] = {
    "full": {},
    "no_nei": {"lambda_nei": 0.0},
    "no_deg": {"lambda_deg": 0.0},
    "no_nei_no_deg": {"lambda_nei": 0.0, "lambda_deg": 0.0},
}

TASK_METRIC = {"node": "accuracy", "link": "auc", "graph": "accuracy"}


# --- metrics --------------------------------------------------------------

def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the ROC curve via average ranks (ties count one half).

    Raises:
        ValueError: Only one class present
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both positive and negative examples")
    ranks = rankdata(scores)  # average ranks
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def link_scores(z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Inner product <z_i, z_j> for each (i, j) row of pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]])


def graph_embedding(stack: Union[EmbeddingStack, np.ndarray]) -> np.ndarray:
    """Column sum of H^(L)."""
    final = stack.final if isinstance(stack, EmbeddingStack) else np.asarray(stack)
    if final.shape[0] == 0:
        raise GraphError("graph_embedding of an empty graph is undefined")
    return final.sum(axis=0)


# --- splits ---------------------------------------------------------------

def partition_sizes(total: int, ratios: Sequence[float]) -> List[int]:
    """Floor each share, then hand out the remainder by largest fractional part."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ConfigError(f"Split ratios must be non-negative and sum to 1, got {list(ratios)}")
    exact = [total * r for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    leftover = total - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda k: (-(exact[k] - sizes[k]), k))
    for k in order[:leftover]:
        sizes[k] += 1
    return sizes


def make_node_split(
    labels: np.ndarray, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0
) -> NodeSplit:
    """Seeded split stratified by label."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts: List[List[int]] = [[], [], []]
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        sizes = partition_sizes(len(members), ratios)
        start = 0
        for k, size in enumerate(sizes):
            parts[k].extend(members[start:start + size].tolist())
            start += size
    train, val, test = (np.sort(np.array(p, dtype=np.int64)) for p in parts)
    return NodeSplit(train=train, val=val, test=test, source="generated")


def make_graph_split(
    labels: np.ndarray, ratios: Sequence[float] = (0.5, 0.2, 0.3), seed: int = 0
) -> GraphSplit:
    """Seeded split of graph indices, stratified by graph label."""
    split = make_node_split(labels, ratios, seed)
    return GraphSplit(train=split.train, val=split.val, test=split.test)


def _sample_non_edges(g: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    n = g.node_count
    available = n * (n - 1) // 2 - g.edge_count
    if count > available:
        raise GraphError(
            f"Graph too dense: need {count} negative pairs but only {available} non-edges exist"
        )
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)

    if available <= 4 * count:
        rows, cols = np.triu_indices(n, k=1)
        keep = np.array([not g.has_edge(i, j) for i, j in zip(rows, cols)], dtype=bool)
        candidates = np.stack([rows[keep], cols[keep]], axis=1)
        chosen = rng.choice(len(candidates), size=count, replace=False)
        return candidates[chosen]

    chosen: List[Tuple[int, int]] = []
    seen = set()
    while len(chosen) < count:
        draws = rng.integers(0, n, size=(2 * (count - len(chosen)) + 16, 2))
        for i, j in draws:
            i, j = int(i), int(j)
            if i == j:
                continue
            key = (min(i, j), max(i, j))
            if key in seen or key in g.edges:
                continue
            seen.add(key)
            chosen.append(key)
            if len(chosen) == count:
                break
    return np.array(chosen, dtype=np.int64)


def make_link_split(
    g: Graph, ratios: Sequence[float] = (0.85, 0.05, 0.10), seed: int = 0
) -> Tuple[LinkSplit, Graph]:
    """
    Split edges into train/val/test positives, each with as many sampled non-edges.

    Returns:
        (split, training graph containing only the train positives)

    Raises:
        GraphError: Not enough non-edges to sample the negatives
    """
    rng = np.random.default_rng(seed)
    edges = np.array(g.sorted_edges(), dtype=np.int64).reshape(-1, 2)
    sizes = partition_sizes(len(edges), ratios)
    shuffled = edges[rng.permutation(len(edges))]
    negatives = _sample_non_edges(g, len(edges), rng)

    bounds = np.cumsum([0] + sizes)
    pos = [shuffled[bounds[k]:bounds[k + 1]] for k in range(3)]
    neg = [negatives[bounds[k]:bounds[k + 1]] for k in range(3)]

    split = LinkSplit(
        train_pos=pos[0], val_pos=pos[1], test_pos=pos[2],
        train_neg=neg[0], val_neg=neg[1], test_neg=neg[2],
        seed=seed,
    )
    train_graph = build_graph(g.node_count, [tuple(e) for e in pos[0]])
    logger.debug(f"Link split sizes (train/val/test): {sizes}")
    return split, train_graph


# --- MLP heads --------------------------------------------------------------

@dataclass
class MlpHead:
    """Affine layers with relu between; inputs standardized with training statistics."""
    params: ParameterStore
    mean: np.ndarray
    std: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        bound = self.params.bind()
        return fnn_forward(self._prepare(x), bound, HEAD_PREFIX).value

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def _prepare(self, x: np.ndarray) -> Tensor:
        return Tensor((np.asarray(x, dtype=np.float64) - self.mean) / self.std)


def init_mlp_head(
    in_dim: int, out_dim: int, config: HeadConfig, rng: np.random.Generator
) -> ParameterStore:
    widths = [in_dim] + [config.hidden] * (config.layers - 1) + [out_dim]
    store = ParameterStore()
    init_fnn(store, HEAD_PREFIX, widths, rng)
    return store


def train_mlp_head(
    x: np.ndarray,
    y: np.ndarray,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    n_classes: int,
    config: HeadConfig,
    seed: int = 0,
) -> MlpHead:
    """
    Full-batch Adam on softmax cross-entropy with early stopping on validation
    accuracy, ties broken by validation loss.

    Returns:
        Head holding the parameters from the best validation epoch
    """
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(seed)

    if config.standardize and len(train_idx):
        mean = x[train_idx].mean(axis=0, keepdims=True)
        std = x[train_idx].std(axis=0, keepdims=True)
        std[std < 1e-12] = 1.0
    else:
        mean = np.zeros((1, x.shape[1]))
        std = np.ones((1, x.shape[1]))

    head = MlpHead(params=init_mlp_head(x.shape[1], max(n_classes, 1), config, rng), mean=mean, std=std)
    x_train = head._prepare(x[train_idx])
    y_train = y[train_idx]
    state = AdamState(learning_rate=config.learning_rate)

    monitor_idx = val_idx if len(val_idx) else train_idx
    best_score = -np.inf
    best_loss = np.inf
    best_params = head.params.copy()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        with ComputationTape() as tape:
            bound = head.params.bind()
            loss = softmax_cross_entropy(fnn_forward(x_train, bound, HEAD_PREFIX), y_train)
        grads = backward(tape, loss, bound)
        adam_step(head.params, grads, state)

        logits = head.logits(x[monitor_idx])
        score = accuracy(np.argmax(logits, axis=1), y[monitor_idx])
        monitor_loss = softmax_cross_entropy(logits, y[monitor_idx]).item()
        # ties on accuracy go to the lower monitor loss
        if score > best_score or (score == best_score and monitor_loss < best_loss):
            best_score = score
            best_loss = monitor_loss
            best_params = head.params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.debug(f"Head early stop at epoch {epoch} (best monitor accuracy {best_score:.4f})")
                break

    head.params = best_params
    return head


def node_classify(
    embeddings: np.ndarray,
    labels: np.ndarray,
    split: NodeSplit,
    config: HeadConfig,
    seed: int = 0,
) -> Dict[str, float]:
    """
    Train a head on the train rows; report accuracy per partition.

    Returns:
        {"train": ..., "val": ..., "test": ...}
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != embeddings.shape[0]:
        raise ConfigError(f"{len(labels)} labels for {embeddings.shape[0]} embedding rows")
    n_classes = int(labels.max()) + 1 if len(labels) else 1
    missing = sorted(set(range(n_classes)) - set(labels[split.train].tolist()))
    if missing:
        logger.warning(f"Classes {missing} have no training nodes; the head cannot predict them")

    head = train_mlp_head(embeddings, labels, split.train, split.val, n_classes, config, seed)
    predictions = head.predict(embeddings)
    return {
        part: accuracy(predictions[idx], labels[idx])
        for part, idx in (("train", split.train), ("val", split.val), ("test", split.test))
    }


def link_classify(
    z: np.ndarray,
    split: LinkSplit,
    scorer: str = "inner",
    config: Optional[HeadConfig] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """
    AUC per partition.

    scorer "inner" ranks pairs by <z_i, z_j>; "mlp" trains a 2-class head on
    z_i * z_j from the training pairs and ranks by its positive-class margin.
    """
    def pairs_and_labels(name: str) -> Tuple[np.ndarray, np.ndarray]:
        pos, neg = split.partition(name)
        pairs = np.vstack([pos.reshape(-1, 2), neg.reshape(-1, 2)])
        labels = np.concatenate([np.ones(len(pos), dtype=np.int64), np.zeros(len(neg), dtype=np.int64)])
        return pairs, labels

    parts = {name: pairs_and_labels(name) for name in ("train", "val", "test")}

    if scorer == "inner":
        score_fn: Callable[[np.ndarray], np.ndarray] = lambda pairs: link_scores(z, pairs)
    elif scorer == "mlp":
        config = config or HeadConfig()
        features = {name: z[p[:, 0]] * z[p[:, 1]] for name, (p, _) in parts.items()}
        stacked = np.vstack([features["train"], features["val"]])
        labels = np.concatenate([parts["train"][1], parts["val"][1]])
        n_train = len(features["train"])
        head = train_mlp_head(
            stacked, labels, np.arange(n_train), np.arange(n_train, len(stacked)), 2, config, seed
        )

        def score_fn(pairs: np.ndarray) -> np.ndarray:
            logits = head.logits(z[pairs[:, 0]] * z[pairs[:, 1]])
            return logits[:, 1] - logits[:, 0]
    else:
        raise ConfigError(f"Unknown link scorer: {scorer}")

    results = {}
    for name, (pairs, labels) in parts.items():
        if len(np.unique(labels)) < 2:
            results[name] = float("nan")
        else:
            results[name] = auc(score_fn(pairs), labels)
    return results


def graph_classify(
    graph_embeddings: np.ndarray,
    labels: np.ndarray,
    split: GraphSplit,
    config: HeadConfig,
    seed: int = 0,
) -> Dict[str, float]:
    """Head over summed node embeddings; accuracy per partition."""
    labels = np.asarray(labels, dtype=np.int64)
    node_split = NodeSplit(train=split.train, val=split.val, test=split.test)
    return node_classify(graph_embeddings, labels, node_split, config, seed)


# --- pipelines ----------------------------------------------------------------

Dataset = Union[CitationDataset, TuDataset]


def _check_task(task: str, dataset: Dataset) -> None:
    if task in ("node", "link") and not isinstance(dataset, CitationDataset):
        raise ConfigError(f"task={task} needs a single-graph dataset")
    if task == "graph" and not isinstance(dataset, TuDataset):
        raise ConfigError("task=graph needs a graph-collection (TU) dataset")


def dataset_input_dim(dataset: Dataset, run_config: RunConfig) -> int:
    if isinstance(dataset, CitationDataset):
        return dataset.features.shape[1]
    return tu_features(dataset, run_config.max_degree_bucket)[0].shape[1]


def evaluate_embeddings(
    task: str,
    dataset: Dataset,
    embeddings,
    run_config: RunConfig,
    seed: int,
    link_split: Optional[LinkSplit] = None,
) -> Dict[str, float]:
    """Score already computed (frozen) embeddings with the task's head."""
    _check_task(task, dataset)
    head_config = run_config.head_config()
    if task == "node":
        split = dataset.split or make_node_split(dataset.labels, run_config.node_ratios, seed)
        return node_classify(embeddings.final, dataset.labels, split, head_config, seed)
    if task == "link":
        if link_split is None:
            link_split, _ = make_link_split(dataset.graph, run_config.link_ratios, run_config.seed)
        return link_classify(embeddings.final, link_split, run_config.link_scorer, head_config, seed)
    pooled = np.vstack([graph_embedding(stack) for stack in embeddings])
    split = make_graph_split(dataset.labels, run_config.graph_ratios, seed)
    return graph_classify(pooled, dataset.labels, split, head_config, seed)


def run_seed(
    task: str,
    dataset: Dataset,
    run_config: RunConfig,
    seed: int,
    overrides: Optional[Mapping[str, float]] = None,
) -> Dict[str, float]:
    """Train from scratch with `seed`, freeze, and evaluate."""
    _check_task(task, dataset)
    train_config = run_config.train_config(
        dataset_input_dim(dataset, run_config), seed=seed, **dict(overrides or {})
    )
    if task == "graph":
        features = tu_features(dataset, run_config.max_degree_bucket)
        _, stacks, _ = train_unsupervised(dataset.graphs, features, train_config)
        return evaluate_embeddings(task, dataset, stacks, run_config, seed)
    if task == "link":
        split, train_graph = make_link_split(dataset.graph, run_config.link_ratios, seed)
        _, stack, _ = train_unsupervised(train_graph, dataset.features, train_config)
        return evaluate_embeddings(task, dataset, stack, run_config, seed, link_split=split)
    _, stack, _ = train_unsupervised(dataset.graph, dataset.features, train_config)
    return evaluate_embeddings(task, dataset, stack, run_config, seed)


def map_seeds(fn: Callable[[int], Dict[str, float]], seeds: Sequence[int], workers: int = 1) -> List[Dict[str, float]]:
    """Run fn per seed, in parallel threads when workers > 1; results keep seed order."""
    if workers <= 1:
        return [fn(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def summarize(
    variant: str, dataset: str, metric: str, values: Sequence[float], seeds: Sequence[int]
) -> Dict[str, object]:
    values = np.asarray(values, dtype=np.float64)
    return {
        "variant": variant,
        "dataset": dataset,
        "metric": metric,
        "mean": float(values.mean()),
        "std": float(values.std()),
        "seeds": ",".join(str(s) for s in seeds),
    }


def run_ablation(
    dataset: Dataset,
    task: str,
    run_config: RunConfig,
    seeds: Sequence[int],
    variants: Optional[Mapping[str, Mapping[str, float]]] = None,
) -> pd.DataFrame:
    """
    Mean ± std of the test metric per loss variant.

    Returns:
        DataFrame with columns variant, dataset, metric, mean, std, seeds
    """
    variants = variants if variants is not None else ABLATION_VARIANTS
    metric = TASK_METRIC[task]
    rows = []
    for name, overrides in variants.items():
        logger.info(f"Ablation variant '{name}' ({dict(overrides) or 'full loss'}) over seeds {list(seeds)}")
        results = map_seeds(
            lambda s: run_seed(task, dataset, run_config, s, overrides), seeds, run_config.workers
        )
        rows.append(summarize(name, dataset.name, metric, [r["test"] for r in results], seeds))
    return pd.DataFrame(rows, columns=["variant", "dataset", "metric", "mean", "std", "seeds"])


def run_sensitivity(
    dataset: Dataset,
    task: str,
    run_config: RunConfig,
    parameter: str,
    values: Sequence[float],
    seeds: Sequence[int],
) -> pd.DataFrame:
    """Sweep lambda_nei or lambda_deg; one row per value."""
    if parameter not in ("lambda_nei", "lambda_deg"):
        raise ConfigError(f"Sensitivity sweeps support lambda_nei and lambda_deg, not '{parameter}'")
    variants = {f"{parameter}={value:g}": {parameter: float(value)} for value in values}
    return run_ablation(dataset, task, run_config, seeds, variants)
