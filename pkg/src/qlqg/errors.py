"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical failures with 3, verification mismatches with 4.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration value; carries the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class NumericsError(RuntimeError):
    """Base class for runtime numerical failures."""


class CovarianceStepError(NumericsError):
    """A filter step produced an invalid covariance matrix.

    Raised when an Euler step drives a variance non-positive or breaks
    the uncertainty bound beyond the discretization tolerance; the fix
    is a smaller step size.
    """


class RiccatiError(NumericsError):
    """No acceptable stabilizing Riccati solution could be computed."""


class TruncationError(NumericsError):
    """Number-basis truncation too small for the requested evolution."""


class TraceError(NumericsError):
    """Density-matrix trace drifted beyond tolerance before renormalization."""
