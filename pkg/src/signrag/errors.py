"""Exception hierarchy shared by every pipeline stage."""


class SignRAGError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SignRAGError, ValueError):
    """An input violates a documented invariant."""


class ManifestParseError(ValidationError):
    """A line-delimited manifest could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class NotFoundError(SignRAGError, KeyError):
    """A sign code or other key is not present."""

    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class EmptyStoreError(SignRAGError):
    """A query was issued against a store with no entries."""


class StoreFormatError(SignRAGError):
    """A store file has a bad magic number or unsupported version."""


class StoreCorruptionError(SignRAGError):
    """A store file is truncated or internally inconsistent."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ConsistencyError(SignRAGError):
    """Retrieved codes cannot be resolved in the store (index drift)."""


class CalibrationError(ValidationError):
    """Calibration samples do not support fitting a filter."""


class BackendError(SignRAGError):
    """Base class for model backend failures."""


class TransportError(BackendError):
    """The backend could not be reached; safe to retry."""

    retryable = True


class DegradedOutputError(BackendError):
    """The backend answered, but with unusable output."""

    retryable = False


class StageError(SignRAGError):
    """Wraps a failure with the pipeline stage it happened in.

    ``stage`` is one of ``"descriptor"``, ``"embedder"``, ``"store"`` or
    ``"generation"``.
    """

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage} stage failed: {cause}")
