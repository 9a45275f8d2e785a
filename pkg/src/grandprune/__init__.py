"""Score, rank and prune text-classification training sets with GraNd and EL2N."""

__version__ = "0.1.0"

from .errors import DataError, GrandPruneError, NumericError, UsageError

__all__ = ["DataError", "GrandPruneError", "NumericError", "UsageError", "__version__"]
