"""Shared exception types for the pipeline modules."""


class ConfigError(ValueError):
    """A configuration value is missing, inconsistent, or out of range."""


class DataError(ValueError):
    """A dataset or split violates a pipeline precondition."""


class IngestError(DataError):
    """Raw dataset files are missing or unreadable."""


class ParseError(DataError):
    """A raw data row could not be parsed; message carries file and line."""
