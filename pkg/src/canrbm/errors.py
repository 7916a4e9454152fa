"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CanRbmError(Exception):
    """Base class for all package errors."""


class ParseError(CanRbmError):
    """A log record could not be parsed (raised only in strict mode)."""

    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}: {line!r}")


class OrderingError(CanRbmError):
    """Timestamps are not in nondecreasing order."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"timestamp at index {index} is earlier than its predecessor")


class InvalidFrameError(CanRbmError):
    pass


class DimensionError(CanRbmError):
    pass


class ModelFormatError(CanRbmError):
    """A serialized model is truncated, of the wrong version, or inconsistent."""


class EnumerationTooLargeError(CanRbmError):
    pass


class UndefinedMetricError(CanRbmError):
    """Similarity or correlation is undefined for the given input (zero or constant vector)."""


class ConfigError(CanRbmError):
    pass


class DatasetFormatError(CanRbmError):
    """An encoded-dataset file has a bad header or rows that disagree with it."""
