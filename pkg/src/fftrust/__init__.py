"""Noise-robust, domain-generalized sequence classification at desk scale.

A small numpy autodiff engine drives a per-epoch encoder trained with a
composite objective: classification with confidence/diversity
regularization, temporal and spectral early-learning regularization,
reconstruction, and epoch- and sequence-level domain alignment.
"""

from .config import TrainConfig, load_config
from .data import SequenceRecord, generate_benchmark, lodo_split, read_dataset, write_dataset
from .estimator import FFTrustClassifier
from .exceptions import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DomainError,
    FFTrustError,
    IntegrityError,
    ParseError,
    VersionError,
)
from .harness import resume, run_benchmark, train
from .model import ModelDims

__version__ = "0.1.0"

__all__ = [
    "TrainConfig", "load_config", "SequenceRecord", "generate_benchmark", "lodo_split", "read_dataset",
    "write_dataset", "FFTrustClassifier", "ConfigError", "ContractError", "DataError", "DimensionError",
    "DomainError", "FFTrustError", "IntegrityError", "ParseError", "VersionError", "resume",
    "run_benchmark", "train", "ModelDims",
]
