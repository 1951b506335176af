"""
Reverse-mode differentiation over dense float64 matrices.

Primitives record themselves on the active ComputationTape (if any) and
backward() walks the tape in reverse. Outside a tape the same functions
simply evaluate, which is how inference and finite differences run.
"""
import contextvars
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from errors import ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


@dataclass(eq=False)
class Tensor:
    """2-D float64 matrix, optionally a named trainable parameter."""
    value: np.ndarray
    name: Optional[str] = None
    requires_grad: bool = False

    def __post_init__(self):
        value = np.asarray(self.value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {value.shape}")
        self.value = value

    @classmethod
    def parameter(cls, value: np.ndarray, name: str) -> "Tensor":
        # shares memory with the caller's array so in-place updates are seen
        return cls(value=value, name=name, requires_grad=True)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class TapeEntry:
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


_active_tape: contextvars.ContextVar[Optional["ComputationTape"]] = contextvars.ContextVar(
    "active_tape", default=None
)


@dataclass
class ComputationTape:
    """
    Ordered record of primitive calls.

    Use as a context manager; only one tape is active per thread/context.
    """
    entries: List[TapeEntry] = field(default_factory=list)
    _token: Optional[contextvars.Token] = field(default=None, repr=False)

    def __enter__(self) -> "ComputationTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, output: Tensor, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> None:
        self.entries.append(TapeEntry(op=op, output=output, inputs=inputs, backward=backward_fn))


def active_tape() -> Optional[ComputationTape]:
    return _active_tape.get()


def _emit(op: str, value: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value=value, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, out, inputs, backward_fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- forward primitives -------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def backward_fn(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _emit("matmul", a.value @ b.value, (a, b), backward_fn)


def sparse_dense_matmul(s: sp.spmatrix, b) -> Tensor:
    """Constant sparse operator times a dense tensor."""
    b = as_tensor(b)
    if s.shape[1] != b.shape[0]:
        raise ShapeError(f"sparse_dense_matmul: shape mismatch {s.shape} @ {b.shape}")
    s = sp.csr_matrix(s)

    def backward_fn(g):
        return (np.asarray(s.T @ g),)

    return _emit("sparse_dense_matmul", np.asarray(s @ b.value), (b,), backward_fn)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> bool:
    """True when b is a 1xC row vector added to every row of a."""
    if a.shape == b.shape:
        return False
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return True
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row_bias = _broadcast_check("add", a, b)

    def backward_fn(g):
        gb = g.sum(axis=0, keepdims=True) if row_bias else g
        return g, gb

    return _emit("add", a.value + b.value, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row_bias = _broadcast_check("sub", a, b)

    def backward_fn(g):
        gb = -g.sum(axis=0, keepdims=True) if row_bias else -g
        return g, gb

    return _emit("sub", a.value - b.value, (a, b), backward_fn)


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("elementwise_mul", a, b)

    def backward_fn(g):
        return g * b.value, g * a.value

    return _emit("elementwise_mul", a.value * b.value, (a, b), backward_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0  # subgradient 0 at 0

    def backward_fn(g):
        return (g * mask,)

    return _emit("relu", np.where(mask, a.value, 0.0), (a,), backward_fn)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)

    def backward_fn(g):
        return (g * out,)

    return _emit("exp", out, (a,), backward_fn)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g):
        return (g / a.value,)

    return _emit("log", np.log(a.value), (a,), backward_fn)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g):
        return (2.0 * g * a.value,)

    return _emit("square", a.value * a.value, (a,), backward_fn)


def clip(a, low: float, high: float) -> Tensor:
    """Clamp entries to [low, high]; gradient passes only inside the interval."""
    a = as_tensor(a)
    inside = (a.value >= low) & (a.value <= high)

    def backward_fn(g):
        return (g * inside,)

    return _emit("clip", np.clip(a.value, low, high), (a,), backward_fn)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def backward_fn(g):
        return (g * factor,)

    return _emit("scale", a.value * factor, (a,), backward_fn)


def sum(a) -> Tensor:  # noqa: A001 - primitive name
    a = as_tensor(a)

    def backward_fn(g):
        return (np.full(a.shape, g[0, 0]),)

    return _emit("sum", np.array([[a.value.sum()]]), (a,), backward_fn)


def row_sum(a) -> Tensor:
    """N x C -> N x 1."""
    a = as_tensor(a)

    def backward_fn(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("row_sum", a.value.sum(axis=1, keepdims=True), (a,), backward_fn)


def col_sum(a) -> Tensor:
    """N x C -> 1 x C."""
    a = as_tensor(a)

    def backward_fn(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("col_sum", a.value.sum(axis=0, keepdims=True), (a,), backward_fn)


def squared_frobenius(a, b) -> Tensor:
    """Σ (a - b)² as a 1x1 tensor."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("squared_frobenius", a, b)
    diff = a.value - b.value

    def backward_fn(g):
        return 2.0 * g[0, 0] * diff, -2.0 * g[0, 0] * diff

    return _emit("squared_frobenius", np.array([[np.sum(diff * diff)]]), (a, b), backward_fn)


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {n} rows but labels of shape {labels.shape}")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean() if n else 0.0

    def backward_fn(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (g[0, 0] * grad / max(n, 1),)

    return _emit("softmax_cross_entropy", np.array([[loss]]), (logits,), backward_fn)


# --- reverse pass -------------------------------------------------------

def backward(
    tape: ComputationTape,
    output: Tensor,
    params: Optional[Mapping[str, Tensor]] = None,
) -> Dict[str, np.ndarray]:
    """
    Reverse-mode gradients of a scalar output.

    Args:
        tape: Tape the output was computed on
        output: 1x1 tensor
        params: Named parameter tensors; ones that never reached the output get zeros

    Returns:
        Gradient arrays keyed by parameter name
    """
    if output.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) output, got {output.shape}")

    grads: Dict[int, np.ndarray] = {id(output): np.ones((1, 1))}
    named: Dict[str, Tensor] = {}

    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for tensor, tg in zip(entry.inputs, entry.backward(g)):
            if tg is None or not tensor.requires_grad:
                continue
            if id(tensor) in grads:
                grads[id(tensor)] = grads[id(tensor)] + tg
            else:
                grads[id(tensor)] = tg
            if tensor.name is not None:
                named[tensor.name] = tensor

    result: Dict[str, np.ndarray] = {}
    if output.name is not None and id(output) in grads:
        named[output.name] = output
    for name, tensor in named.items():
        result[name] = grads.get(id(tensor), np.zeros_like(tensor.value))
    for name, tensor in (params or {}).items():
        result.setdefault(name, np.zeros_like(tensor.value))
    return result


# --- seeded sampling ----------------------------------------------------

@dataclass
class RngState:
    """Serializable generator state: a 64-bit seed plus a draw counter."""
    seed: int
    draws: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")

    def copy(self) -> "RngState":
        return RngState(seed=self.seed, draws=self.draws)

    def to_dict(self) -> Dict[str, int]:
        return {"seed": self.seed, "draws": self.draws}

    @classmethod
    def from_dict(cls, data: Mapping[str, int]) -> "RngState":
        return cls(seed=int(data["seed"]), draws=int(data["draws"]))


def sample_standard_normal(shape: Tuple[int, int], rng: RngState) -> Tensor:
    """
    I.i.d. standard normal matrix; advances rng by one draw.

    The same (seed, draws) always yields the same matrix.
    """
    generator = np.random.default_rng([rng.seed, rng.draws])
    rng.draws += 1
    return Tensor(generator.standard_normal(shape))
