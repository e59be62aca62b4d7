"""Exceptions raised by the onebit_precoding package."""


class PrecodingError(Exception):
    """Base class for every error the library raises."""


class InputError(PrecodingError, ValueError):
    """Invalid argument: non-finite data, wrong shapes or out-of-range parameters."""


class SolverError(PrecodingError, ArithmeticError):
    """A numerical step could not be carried out (e.g. a rank-deficient channel)."""


class ConfigError(PrecodingError):
    """An experiment config does not match the schema."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
