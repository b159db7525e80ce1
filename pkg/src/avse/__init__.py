"""Desk-scale audio-visual speech enhancement toolkit.

Library + CLI: a minimal autodiff engine, STFT/log-Mel front-end, synthetic
audio-video data generation, a fusion encoder-decoder network with a
two-stage cross-attention block per decoder layer, an Adam/MSE trainer, and
objective metrics (STOI, SI-SDR, log-spectral distance).
"""

__version__ = "0.1.0"

from .errors import (
    AvseError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    GraphError,
    NumericError,
)
from .tensor import Tensor

__all__ = [
    "AvseError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "FormatError",
    "GraphError",
    "NumericError",
    "Tensor",
    "__version__",
]
