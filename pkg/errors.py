"""
Exception hierarchy.
Library modules raise these; runner.py maps them to exit statuses.
"""


class GraphVaeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GraphVaeError, ValueError):
    """Invalid or inconsistent configuration."""


class DataFormatError(GraphVaeError, ValueError):
    """Dataset, split or checkpoint file that cannot be used as-is."""


class GraphError(GraphVaeError, ValueError):
    """Graph construction or graph-operation precondition violated."""


class ShapeError(GraphVaeError, ValueError):
    """Tensor shapes do not line up for an operation."""


class NumericalError(GraphVaeError, ArithmeticError):
    """Non-finite values or an unreliable numerical check."""


class TrainingDivergedError(NumericalError):
    """Total loss became non-finite during training."""

    def __init__(self, epoch: int, value: float):
        super().__init__(f"Training diverged at epoch {epoch}: total loss = {value}")
        self.epoch = epoch
        self.value = value


class NonDeterministicLossError(NumericalError):
    """Repeated evaluation of a loss at the same point gave different values."""
