"""EEG emotion recognition with a spatial-temporal information learning
network, built from scratch on a minimal tape-based autodiff engine."""

from .errors import (
    ConfigError,
    ContractError,
    NumericError,
    ShapeError,
    StilnError,
    TrainingDivergedError,
)
from .tensor import Tape, Tensor, backward, zero_grads

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "zero_grads",
    "StilnError",
    "ShapeError",
    "ContractError",
    "ConfigError",
    "NumericError",
    "TrainingDivergedError",
    "__version__",
]
