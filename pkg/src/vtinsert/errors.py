"""Failure classes shared across modules, mapped to CLI exit codes.

ConfigError -> 2, PreconditionError -> 3, NumericError -> 4; plain OSError
covers I/O (5). Keeping the taxonomy here lets library code raise precise
errors without importing the CLI.
"""


class ConfigError(ValueError):
    """Invalid, unknown, or out-of-range configuration."""


class PreconditionError(RuntimeError):
    """An operation was invoked before its prerequisites held."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed numerical check."""
