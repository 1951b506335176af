"""
Dataset ingestion, checkpoints and embedding export.

Loaders reject inconsistent input instead of repairing it; the one
exception is an undirected edge listed in both directions, which is
collapsed to a single edge.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import RngState
from errors import DataFormatError, GraphError
from graph_core import Graph, build_graph
from models import CitationDataset, NodeSplit, TuDataset
from parameters import ParameterStore

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "weights.bin"
DEFAULT_MAX_DEGREE = 64


def _read_lines(path: Path) -> List[Tuple[int, str]]:
    """(line number, stripped text) for every nonblank line."""
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"Missing file: {path}")
    with open(path, "r") as f:
        return [(n, line.strip()) for n, line in enumerate(f, start=1) if line.strip()]


def _collapse_undirected(
    pairs: Sequence[Tuple[int, int, int]], path: Path
) -> List[Tuple[int, int]]:
    """Deduplicate (i, j)/(j, i); self-loops are rejected with their line number."""
    seen = set()
    edges = []
    for lineno, i, j in pairs:
        if i == j:
            raise DataFormatError(f"{path}:{lineno}: self-loop ({i}, {j}) is not allowed")
        key = (min(i, j), max(i, j))
        if key not in seen:
            seen.add(key)
            edges.append(key)
    return edges


def _read_edge_file(path: Path) -> List[Tuple[int, int, int]]:
    pairs = []
    for lineno, text in _read_lines(path):
        parts = text.split()
        try:
            if len(parts) != 2:
                raise ValueError
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(
                f"{path}:{lineno}: expected two integer node indices, got '{text}'"
            ) from None
        if i < 0 or j < 0:
            raise DataFormatError(f"{path}:{lineno}: negative node index in '{text}'")
        pairs.append((lineno, i, j))
    return pairs


def _read_feature_file(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, text in _read_lines(path):
        try:
            row = np.array(text.split(), dtype=np.float64)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} features, got {len(row)}")
        rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no feature rows")
    return np.vstack(rows)


def _read_int_column(path: Path, what: str) -> np.ndarray:
    values = []
    for lineno, text in _read_lines(path):
        try:
            values.append(int(text))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: expected one integer {what}, got '{text}'") from None
    return np.array(values, dtype=np.int64)


def identity_features(node_count: int) -> np.ndarray:
    """One identity column per node, for graphs without attributes."""
    return np.eye(node_count)


def degree_one_hot_features(g: Graph, max_degree: int = DEFAULT_MAX_DEGREE) -> np.ndarray:
    """One-hot node degree; degrees above max_degree share the last bucket."""
    buckets = np.minimum(g.degrees, max_degree)
    features = np.zeros((g.node_count, max_degree + 1))
    features[np.arange(g.node_count), buckets] = 1.0
    return features


def load_edgelist_dataset(
    edge_file: Path,
    feature_file: Optional[Path] = None,
    label_file: Optional[Path] = None,
    split_files: Optional[Tuple[Optional[Path], Path, Path]] = None,
    name: Optional[str] = None,
) -> CitationDataset:
    """
    Load a single-graph dataset from plain text files.

    Args:
        edge_file: Two whitespace-separated 0-based node indices per line
        feature_file: One whitespace-separated float row per node (identity features when None)
        label_file: One integer label per node (all zeros when None)
        split_files: (train, val, test) files with one node index per line; a None
            train file means every node outside val and test
        name: Dataset name (defaults to the edge file's parent directory name)

    Returns:
        CitationDataset

    Raises:
        DataFormatError: Parse failure (with line number), index overflow or row-count mismatch
    """
    edge_file = Path(edge_file)
    name = name or edge_file.parent.name or edge_file.stem
    pairs = _read_edge_file(edge_file)

    features = _read_feature_file(feature_file) if feature_file is not None else None
    labels = _read_int_column(label_file, "label") if label_file is not None else None

    if features is not None:
        node_count = features.shape[0]
    elif labels is not None:
        node_count = len(labels)
    else:
        node_count = max((max(i, j) for _, i, j in pairs), default=-1) + 1

    if labels is not None and len(labels) != node_count:
        raise DataFormatError(
            f"{label_file}: {len(labels)} labels but {node_count} nodes"
        )
    if labels is not None and np.any(labels < 0):
        raise DataFormatError(f"{label_file}: labels must be non-negative")
    for lineno, i, j in pairs:
        if i >= node_count or j >= node_count:
            raise DataFormatError(
                f"{edge_file}:{lineno}: node index {max(i, j)} out of range for {node_count} nodes"
            )

    try:
        graph = build_graph(node_count, _collapse_undirected(pairs, edge_file))
    except GraphError as e:
        raise DataFormatError(f"{edge_file}: {e}") from e

    featureless = features is None
    if featureless:
        features = identity_features(node_count)
    if labels is None:
        labels = np.zeros(node_count, dtype=np.int64)

    split = None
    if split_files is not None:
        parts = []
        for path in split_files:
            if path is None:
                parts.append(None)
                continue
            idx = _read_int_column(path, "node index")
            if np.any((idx < 0) | (idx >= node_count)):
                raise DataFormatError(f"{path}: node index out of range for {node_count} nodes")
            parts.append(idx)
        given = [p for p in parts if p is not None]
        if len(np.unique(np.concatenate(given))) != sum(len(p) for p in given):
            raise DataFormatError("Split files overlap or repeat node indices")
        if parts[0] is None:
            parts[0] = np.setdiff1d(np.arange(node_count), np.concatenate(parts[1:])).astype(np.int64)
        split = NodeSplit(train=parts[0], val=parts[1], test=parts[2], source="shipped")

    logger.info(
        f"Loaded {name}: {node_count} nodes, {graph.edge_count} edges, "
        f"{features.shape[1]} features{' (identity)' if featureless else ''}, "
        f"{int(labels.max()) + 1 if node_count else 0} classes"
    )
    return CitationDataset(
        name=name,
        graph=graph,
        features=features,
        labels=labels,
        split=split,
        featureless=featureless,
    )


def load_tu_dataset(directory: Path, name: str) -> TuDataset:
    """
    Load a graph collection in the TU flat text format.

    Expects NAME_A.txt (1-based "i, j" edges), NAME_graph_indicator.txt,
    NAME_graph_labels.txt and optionally NAME_node_labels.txt. Edge labels
    are ignored.

    Raises:
        DataFormatError: Missing file, non-contiguous indicator or cross-graph edge
    """
    directory = Path(directory)
    prefix = directory / name

    indicator = _read_int_column(Path(f"{prefix}_graph_indicator.txt"), "graph id")
    if len(indicator) == 0:
        raise DataFormatError(f"{prefix}_graph_indicator.txt: no nodes")
    if indicator[0] != 1 or np.any(np.diff(indicator) < 0) or np.any(np.diff(indicator) > 1):
        bad = int(np.argmax((np.diff(indicator) < 0) | (np.diff(indicator) > 1))) + 2
        raise DataFormatError(
            f"{prefix}_graph_indicator.txt: graph ids must start at 1 and be contiguous "
            f"(problem near line {bad if indicator[0] == 1 else 1})"
        )
    graph_count = int(indicator[-1])
    starts = np.searchsorted(indicator, np.arange(1, graph_count + 2))  # node offsets per graph

    per_graph_pairs: List[List[Tuple[int, int, int]]] = [[] for _ in range(graph_count)]
    edge_path = Path(f"{prefix}_A.txt")
    for lineno, text in _read_lines(edge_path):
        try:
            a, b = (int(v) for v in text.replace(",", " ").split())
        except ValueError:
            raise DataFormatError(f"{edge_path}:{lineno}: expected 'i, j', got '{text}'") from None
        if not (1 <= a <= len(indicator) and 1 <= b <= len(indicator)):
            raise DataFormatError(f"{edge_path}:{lineno}: node id out of range in '{text}'")
        ga, gb = indicator[a - 1], indicator[b - 1]
        if ga != gb:
            raise DataFormatError(
                f"{edge_path}:{lineno}: edge ({a}, {b}) joins graph {ga} and graph {gb}"
            )
        base = starts[ga - 1]
        per_graph_pairs[ga - 1].append((lineno, a - 1 - base, b - 1 - base))

    graphs = []
    for k in range(graph_count):
        size = int(starts[k + 1] - starts[k])
        edges = _collapse_undirected(per_graph_pairs[k], edge_path)
        graphs.append(build_graph(size, edges))

    raw_labels = _read_int_column(Path(f"{prefix}_graph_labels.txt"), "graph label")
    if len(raw_labels) != graph_count:
        raise DataFormatError(
            f"{prefix}_graph_labels.txt: {len(raw_labels)} labels for {graph_count} graphs"
        )
    _, labels = np.unique(raw_labels, return_inverse=True)

    features = None
    featureless = True
    node_label_path = Path(f"{prefix}_node_labels.txt")
    if node_label_path.is_file():
        node_labels = _read_int_column(node_label_path, "node label")
        if len(node_labels) != len(indicator):
            raise DataFormatError(
                f"{node_label_path}: {len(node_labels)} labels for {len(indicator)} nodes"
            )
        values, codes = np.unique(node_labels, return_inverse=True)
        one_hot = np.eye(len(values))[codes]
        features = [one_hot[starts[k]:starts[k + 1]] for k in range(graph_count)]
        featureless = False
    else:
        logger.warning(f"{name}: no node labels; degree features will be substituted")

    logger.info(
        f"Loaded {name}: {graph_count} graphs, {len(indicator)} nodes, "
        f"{int(labels.max()) + 1} classes"
    )
    return TuDataset(
        name=name,
        graphs=graphs,
        labels=labels.astype(np.int64),
        features=features,
        featureless=featureless,
    )


def tu_features(dataset: TuDataset, max_degree: int = DEFAULT_MAX_DEGREE) -> List[np.ndarray]:
    """Node-label one-hot features, or degree one-hot for featureless collections."""
    if dataset.features is not None:
        return dataset.features
    return [degree_one_hot_features(g, max_degree) for g in dataset.graphs]


@dataclass
class Checkpoint:
    """Everything needed to restore a trained model."""
    params: ParameterStore
    config: Dict[str, Any]
    rng: RngState
    format_version: int = CHECKPOINT_FORMAT_VERSION
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    store: ParameterStore,
    config: Dict[str, Any],
    rng: RngState,
    path: Path,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write `manifest.json` and `weights.bin` into the directory `path`.

    The payload is every tensor as little-endian float64, row-major, in
    manifest order.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    tensors = []
    offset = 0
    with open(path / PAYLOAD_NAME, "wb") as f:
        for name, value in store.items():
            blob = np.ascontiguousarray(value, dtype="<f8").tobytes()
            tensors.append({
                "name": name,
                "shape": list(value.shape),
                "offset": offset,
                "nbytes": len(blob),
            })
            f.write(blob)
            offset += len(blob)

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "payload_bytes": offset,
        "tensors": tensors,
        "config": config,
        "rng": rng.to_dict(),
        "extra": extra or {},
    }
    with open(path / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    logger.info(f"Saved checkpoint with {len(tensors)} tensors ({offset} bytes) to {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint directory written by save_checkpoint().

    Raises:
        DataFormatError: Corrupted manifest, version mismatch, shape/byte-count
            disagreement or truncated payload
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    payload_path = path / PAYLOAD_NAME
    if not manifest_path.is_file() or not payload_path.is_file():
        raise DataFormatError(f"{path}: not a checkpoint directory (need {MANIFEST_NAME} and {PAYLOAD_NAME})")

    try:
        with open(manifest_path, "r") as f:
            manifest = json.load(f)
        version = manifest["format_version"]
        entries = manifest["tensors"]
        payload_bytes = int(manifest["payload_bytes"])
        rng = RngState.from_dict(manifest["rng"])
        config = manifest["config"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{manifest_path}: corrupted manifest ({e})") from e

    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(
            f"{manifest_path}: format version {version}, this build reads {CHECKPOINT_FORMAT_VERSION}"
        )

    expected = 0
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        from_shape = int(np.prod(shape)) * 8
        if from_shape != int(entry["nbytes"]):
            raise DataFormatError(
                f"{manifest_path}: tensor '{entry['name']}' shape {list(shape)} implies "
                f"{from_shape} bytes but manifest records {entry['nbytes']}"
            )
        expected += from_shape
    if expected != payload_bytes:
        raise DataFormatError(
            f"{manifest_path}: tensor shapes add up to {expected} bytes, manifest says {payload_bytes}"
        )

    payload = payload_path.read_bytes()
    if len(payload) != expected:
        raise DataFormatError(
            f"{payload_path}: payload length mismatch, expected {expected} bytes, found {len(payload)}"
        )

    store = ParameterStore()
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        start = int(entry["offset"])
        stop = start + int(entry["nbytes"])
        values = np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64).reshape(shape)
        store.add(entry["name"], values)

    return Checkpoint(
        params=store,
        config=config,
        rng=rng,
        format_version=version,
        extra=manifest.get("extra", {}),
    )


def export_embeddings(path: Path, matrix: np.ndarray, dataset: str, layer: int) -> Path:
    """One whitespace-separated row per node under a `# dataset=… layer=… dim=…` header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    np.savetxt(
        path,
        matrix,
        fmt="%.17g",
        header=f"dataset={dataset} layer={layer} dim={matrix.shape[1]}",
        comments="# ",
    )
    return path


def read_embeddings(path: Path) -> Tuple[Dict[str, str], np.ndarray]:
    """Inverse of export_embeddings: (header fields, matrix)."""
    path = Path(path)
    with open(path, "r") as f:
        header = f.readline().lstrip("#").split()
    fields = dict(item.split("=", 1) for item in header if "=" in item)
    matrix = np.loadtxt(path, comments="#", ndmin=2)
    return fields, matrix
