"""Exception types shared across the package.

ValidationError covers rejected inputs (bad shapes, non-finite values,
malformed files) and maps to CLI exit code 1. NumericFault covers runtime
numeric failures (NaN gradients, diverging optimization) and maps to exit
code 2.
"""


class ValidationError(ValueError):
    """Input rejected before any computation ran."""


class GeometryError(ValidationError):
    """Mesh construction produced invalid geometry (e.g. non-positive depth)."""


class ConfigError(ValidationError):
    """Mismatched configuration, e.g. texture size vs. UV layout."""


class NumericFault(RuntimeError):
    """NaN/Inf detected mid-computation; carries context where useful."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
