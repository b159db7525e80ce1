"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
FormatError/DataError -> 3, NumericError -> 4.
"""


class AvseError(Exception):
    """Base class for all package errors."""


class DimensionError(AvseError):
    """Tensor shapes are incompatible; the message names the offending axes."""


class NumericError(AvseError):
    """A computation produced NaN/Inf or otherwise lost numeric validity."""


class GraphError(AvseError):
    """Misuse of the autodiff graph (non-scalar backward, double replay)."""


class ConfigError(AvseError):
    """Invalid or inconsistent configuration."""


class FormatError(AvseError):
    """A file does not conform to its declared on-disk format."""


class DataError(AvseError):
    """Degenerate or malformed data (silent signals, length mismatches)."""
