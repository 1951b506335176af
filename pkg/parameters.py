"""
Trainable parameter storage and small-network helpers.
"""
import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from autodiff import Tensor, add, matmul, relu
from errors import ShapeError

logger = logging.getLogger(__name__)


class ParameterStore:
    """Named float64 weight matrices, in insertion order."""

    def __init__(self, arrays: Optional[Mapping[str, np.ndarray]] = None):
        self._arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._arrays:
            raise KeyError(f"Parameter '{name}' already registered")
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"Parameter '{name}' must be 2-D, got shape {value.shape}")
        self._arrays[name] = value

    def update(self, other: "ParameterStore") -> None:
        for name, value in other.items():
            self.add(name, value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self, prefix: str = "") -> List[str]:
        return [name for name in self._arrays if name.startswith(prefix)]

    def size(self) -> int:
        """Total number of scalar entries."""
        return int(np.sum([v.size for v in self._arrays.values()])) if self._arrays else 0

    def bind(self) -> Dict[str, Tensor]:
        """Parameter tensors sharing memory with the stored arrays."""
        return {name: Tensor.parameter(value, name) for name, value in self._arrays.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore({name: value.copy() for name, value in self._arrays.items()})

    def subset(self, prefix: str) -> "ParameterStore":
        return ParameterStore({n: v for n, v in self._arrays.items() if n.startswith(prefix)})


def scaled_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_fnn(
    store: ParameterStore,
    prefix: str,
    widths: Sequence[int],
    rng: np.random.Generator,
) -> None:
    """
    Register an FNN with affine layers widths[0] -> widths[1] -> ... -> widths[-1].

    Weights use scaled-uniform init, biases start at zero. Names are
    `{prefix}.{k}.weight` and `{prefix}.{k}.bias`.
    """
    for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        store.add(f"{prefix}.{k}.weight", scaled_uniform(fan_in, fan_out, rng))
        store.add(f"{prefix}.{k}.bias", np.zeros((1, fan_out)))


def fnn_depth(params: Mapping[str, object], prefix: str) -> int:
    depth = 0
    while f"{prefix}.{depth}.weight" in params:
        depth += 1
    return depth


def fnn_forward(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Affine layers with relu between them (none after the last)."""
    depth = fnn_depth(params, prefix)
    if depth == 0:
        raise KeyError(f"No FNN parameters under '{prefix}'")
    h = x
    for k in range(depth):
        h = add(matmul(h, params[f"{prefix}.{k}.weight"]), params[f"{prefix}.{k}.bias"])
        if k < depth - 1:
            h = relu(h)
    return h


def fnn_widths(params: Mapping[str, np.ndarray], prefix: str) -> Tuple[int, ...]:
    depth = fnn_depth(params, prefix)
    widths = [np.shape(params[f"{prefix}.0.weight"])[0]]
    widths += [np.shape(params[f"{prefix}.{k}.weight"])[1] for k in range(depth)]
    return tuple(widths)
