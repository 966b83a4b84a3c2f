"""Aspect-level similarity scoring for scientific documents.

Scores document pairs from sentence-level embedding matches: either the
single best sentence pair or an entropy-regularized optimal-transport
coupling over all pairs.  Includes co-citation mining, contrastive training
of a linear projection head, and retrieval evaluation utilities.
"""

from .errors import (
    AspectsimError,
    DataError,
    FormatError,
    InvalidInputError,
    NumericalError,
    TrainingDivergedError,
    UnsupportedSizeError,
)

__version__ = "0.1.0"

__all__ = [
    "AspectsimError",
    "DataError",
    "FormatError",
    "InvalidInputError",
    "NumericalError",
    "TrainingDivergedError",
    "UnsupportedSizeError",
    "__version__",
]
