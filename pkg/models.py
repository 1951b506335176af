"""
Data models shared across the encoder, decoder, training and evaluation code.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from autodiff import RngState, Tensor
from graph_core import Graph


@dataclass
class EmbeddingStack:
    """Per-layer embeddings H^(0..L) of one graph."""
    layers: List[Tensor]

    @property
    def num_layers(self) -> int:
        """L, the number of encoder layers."""
        return len(self.layers) - 1

    @property
    def final(self) -> np.ndarray:
        """H^(L)."""
        return self.layers[-1].value

    def arrays(self) -> List[np.ndarray]:
        return [t.value for t in self.layers]


@dataclass
class DecoderOutputs:
    """
    Inv-GNN decoder outputs; every list is indexed by layer l = 0..L-1.

    sigma is exp(log_sigma) after clamping; prior_mean[L-1] is all zeros.
    """
    mu: List[Tensor]
    log_sigma: List[Tensor]
    sigma: List[Tensor]
    z: List[Tensor]
    prior_mean: List[Tensor]
    degree_pred: List[Tensor]
    noise: List[np.ndarray]

    @property
    def num_layers(self) -> int:
        return len(self.mu)


@dataclass
class LossBreakdown:
    """Loss components and the λ-weighted total."""
    l_self: float
    l_nei: float
    l_deg: float
    total: float
    lambda_nei: float
    lambda_deg: float
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def as_record(self) -> Dict[str, float]:
        return {
            "l_self": self.l_self,
            "l_nei": self.l_nei,
            "l_deg": self.l_deg,
            "total": self.total,
        }


@dataclass
class TrainReport:
    """Outcome of an unsupervised training run."""
    history: List[LossBreakdown]
    epochs: int
    stop_reason: str  # "converged" or "max_epochs"
    rng: Optional[RngState] = None  # noise generator state after the last epoch

    @property
    def final(self) -> LossBreakdown:
        return self.history[-1]

    def to_frame(self) -> pd.DataFrame:
        rows = [{"epoch": i + 1, **b.as_record()} for i, b in enumerate(self.history)]
        return pd.DataFrame(rows, columns=["epoch", "l_self", "l_nei", "l_deg", "total"])


@dataclass
class NodeSplit:
    """Node index partitions; source is "shipped" (from files) or "generated"."""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    source: str = "generated"


@dataclass
class LinkSplit:
    """Positive/negative edge partitions for link prediction."""
    train_pos: np.ndarray  # (k, 2) int arrays
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int

    def partition(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"{name}_pos"), getattr(self, f"{name}_neg")


@dataclass
class GraphSplit:
    """Graph index partitions for graph classification."""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class CitationDataset:
    """Single graph with node features and labels (Cora/CiteSeer/PubMed format)."""
    name: str
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    split: Optional[NodeSplit] = None
    featureless: bool = False

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass
class TuDataset:
    """Collection of small graphs with graph labels (MUTAG/PTC-MR format)."""
    name: str
    graphs: List[Graph]
    labels: np.ndarray
    features: Optional[List[np.ndarray]] = None
    featureless: bool = False

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return len(self.graphs)
