"""Reference-guided multi-contrast MRI super-resolution at desk scale.

A small numpy-based stack: a reverse-mode autodiff core, FFT machinery,
a displacement-warping front end, clustered token attention, a
spatial-frequency restoration network, the k-space degradation pipeline,
and a training loop, all behind one CLI.
"""

from . import backend
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    ShapeError,
    SSCMError,
    TrainingError,
    UnsupportedSizeError,
)
from .tensor import Tape, Tensor, backward, record

__version__ = "0.1.0"

__all__ = [
    "backend",
    "Tensor",
    "Tape",
    "record",
    "backward",
    "SSCMError",
    "ShapeError",
    "ContractError",
    "UnsupportedSizeError",
    "ConfigError",
    "FormatError",
    "TrainingError",
    "__version__",
]
