"""Exception hierarchy.

The three base classes map onto CLI exit codes: configuration/parse problems,
numerical non-convergence, and physical-regime failures (instability,
unattainable thermometry).
"""


class SidebandCoolError(Exception):
    """Base class for all package errors."""


class ConfigError(SidebandCoolError, ValueError):
    """Malformed configuration or input file."""


class NumericalError(SidebandCoolError, RuntimeError):
    """A numerical procedure did not reach its tolerance."""


class RegimeError(SidebandCoolError, ValueError):
    """The request lies outside the physical regime the model supports."""


class RegimeWarning(UserWarning):
    """A result was computed but an approximation behind it is strained."""
