"""Exception types shared across the package."""


class Al3dError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(Al3dError):
    """Malformed input record (bad JSON, missing fields)."""


class InvariantError(Al3dError):
    """A domain-type invariant is violated."""


class FormatError(Al3dError):
    """A file does not conform to its binary/CSV/JSON layout."""


class ConfigError(Al3dError):
    """Invalid or inconsistent configuration."""


class MissingDataError(Al3dError):
    """Required inputs (points, detections, ground truth) are absent."""


class EmptyInputError(Al3dError):
    """An operation that needs at least one sample received none."""


class IoError(Al3dError):
    """Filesystem failure while reading or emitting artifacts."""
