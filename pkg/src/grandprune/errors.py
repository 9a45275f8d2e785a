"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GrandPruneError(Exception):
    exit_code = 1


class UsageError(GrandPruneError, ValueError):
    """Bad arguments or configuration."""

    exit_code = 1


class DataError(GrandPruneError, ValueError):
    """Malformed, inconsistent or missing input data."""

    exit_code = 2


class NumericError(GrandPruneError, ArithmeticError):
    """Divergence or non-finite values during training or scoring."""

    exit_code = 3
