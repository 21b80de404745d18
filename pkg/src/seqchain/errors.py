"""Exceptions shared across the package.

The CLI maps these onto process exit codes, so anything user-facing should
raise one of the three coded classes rather than a bare ValueError.
"""


class SeqchainError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(SeqchainError):
    """Bad configuration: unknown key, unparsable value, invalid combination."""

    exit_code = 2


class DataError(SeqchainError):
    """Dataset problems: missing files, malformed manifest, incompatible task."""

    exit_code = 3


class NumericError(SeqchainError):
    """Non-finite values or a diverged optimization."""

    exit_code = 4


class ShapeError(SeqchainError, ValueError):
    """Array shape or attribute contract violation inside the numeric core."""
