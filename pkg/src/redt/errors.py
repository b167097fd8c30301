"""Exception hierarchy shared across the package.

Exit-code mapping lives in the CLI: UsageError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class RedtError(Exception):
    """Base class for all package errors."""


class UsageError(RedtError):
    """Caller violated an API or CLI contract (bad shapes, bad flags)."""


class ConfigError(UsageError):
    """Invalid configuration value."""


class DataError(RedtError):
    """Bad or malformed data (files, labels, masks)."""


class FormatError(DataError):
    """Malformed on-disk format; message carries the byte offset."""


class NumericalError(RedtError):
    """Non-finite values or diverging optimization."""
