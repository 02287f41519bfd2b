"""Exception types raised across the package."""


class FbmpError(Exception):
    """Base class for all package errors."""


class DimensionError(FbmpError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(FbmpError, ValueError):
    """A parameter is outside its valid range."""


class NumericalError(FbmpError, ArithmeticError):
    """A solver failed: singular system, divergence or non-convergence."""


class FormatError(FbmpError, ValueError):
    """A file does not follow the expected on-disk layout."""
