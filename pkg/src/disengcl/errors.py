"""Shared exception types.

The CLI maps these onto stable exit codes: ConfigError -> 1,
DataError -> 2, TrainingAbort (and anything unexpected) -> 3.
"""


class DisenGCLError(Exception):
    """Base class for all package errors."""


class ConfigError(DisenGCLError):
    """Invalid configuration value or malformed run-config document."""


class DataError(DisenGCLError):
    """Problem with input data files or on-disk bundles."""


class ParseError(DataError):
    """Malformed line in a plain-text dataset file."""

    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class ShapeError(DisenGCLError):
    """Operands with incompatible shapes passed to a tensor op."""


class TrainingAbort(DisenGCLError):
    """Training stopped because of a non-finite loss or gradient."""
