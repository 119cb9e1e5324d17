"""Masked-autoencoder representation learning for DNA barcodes.

The encoder never sees mask tokens: masked positions are dropped from its
input and reconstructed by a separate decoder that is discarded after
pretraining.  Subpackages cover tokenization, corpus handling, the numpy
transformer, training, and the downstream evaluation suite.
"""

__version__ = "0.1.0"

from .errors import (
    BarcodeMaeError,
    CheckpointError,
    ConfigError,
    DataError,
    TrainingDivergedError,
)

__all__ = [
    "BarcodeMaeError",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "TrainingDivergedError",
    "__version__",
]
