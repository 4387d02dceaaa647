"""Exception hierarchy; the CLI maps each class to an exit code."""


class EnsaugError(Exception):
    """Base class for all package errors."""


class DataError(EnsaugError):
    """Unreadable input, schema violation, or inconsistent records."""


class SpecMismatchError(DataError):
    """Artifacts produced by different encoder specs were combined."""


class NumericalError(EnsaugError):
    """Non-finite values appeared in a loss, gradient, or embedding."""
