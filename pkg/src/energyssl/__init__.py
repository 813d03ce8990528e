"""Semi-supervised long-tailed image classification with energy-gated
pseudo-labels, adaptive per-class margins, and hard-triplet metric learning."""

from .config import TrainConfig
from .errors import ConfigError, DataError, NumericError
from .estimator import EnergyGatedSSLClassifier

__all__ = [
    "TrainConfig",
    "ConfigError",
    "DataError",
    "NumericError",
    "EnergyGatedSSLClassifier",
]
