"""
Adam optimizer.
Bias-corrected first/second moment estimates per named parameter.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from errors import ShapeError
from parameters import ParameterStore

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments, step counter and hyperparameters for Adam."""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ParameterStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Tuple[ParameterStore, AdamState]:
    """
    Apply one Adam update in place.

    Args:
        params: Parameters to update
        grads: Gradients keyed by parameter name (missing names count as zero)
        state: Optimizer state, advanced by one step

    Returns:
        (params, state), the same objects that were passed in
    """
    for name, g in grads.items():
        if name in params and np.shape(g) != params[name].shape:
            raise ShapeError(
                f"Gradient for '{name}' has shape {np.shape(g)}, parameter has {params[name].shape}"
            )

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    step_size = state.learning_rate / bias1

    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(value)
            state.second_moment[name] = np.zeros_like(value)
        m = state.first_moment[name]
        v = state.second_moment[name]

        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)

        denom = np.sqrt(v / bias2) + state.epsilon
        value -= step_size * m / denom

    return params, state
