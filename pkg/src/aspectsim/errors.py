"""Exception types shared across the package."""


class AspectsimError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(AspectsimError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(AspectsimError):
    """A file does not conform to its declared binary or JSONL format."""


class NumericalError(AspectsimError, ArithmeticError):
    """A solver produced NaN or overflowed."""


class UnsupportedSizeError(AspectsimError):
    """An instance exceeds the size limit of an exact solver."""


class DataError(AspectsimError):
    """Required data (embeddings, contexts) is missing for an operation."""


class TrainingDivergedError(AspectsimError):
    """Training produced a non-finite loss."""
