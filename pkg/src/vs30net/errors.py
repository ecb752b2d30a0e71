"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2 (usage),
DataError and subclasses -> 3 (data), NumericError -> 4 (numeric).
"""


class Vs30Error(Exception):
    """Base class for all package errors."""


class DimensionError(Vs30Error, ValueError):
    """Tensor/array shapes are inconsistent with the operation."""


class ConfigError(Vs30Error, ValueError):
    """Invalid configuration (unknown key, bad value, bad combination)."""


class DataError(Vs30Error):
    """Input data is missing, malformed, or unusable."""


class FormatError(DataError):
    """A binary or text container violates its format contract."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedError(FormatError):
    """File ends before its declared payload does."""


class NumericError(Vs30Error):
    """Non-finite values where finite ones are required (NaN/Inf)."""
