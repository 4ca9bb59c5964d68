"""Shared exception types for the membase engine."""

from __future__ import annotations


class MembaseError(Exception):
    """Base class for all membase errors.

    Every error carries a stable machine-readable ``code`` so the service
    layer can map it onto a problem-detail payload without string matching.
    """

    code = "internal"

    def __init__(self, message: str, *, path: str | None = None):
        super().__init__(message)
        self.message = message
        self.path = path


class SchemaSyntaxError(MembaseError):
    """Schema document is not well-formed. ``position`` is a char offset."""

    code = "schema_syntax"

    def __init__(self, message: str, *, position: int | None = None, path: str | None = None):
        super().__init__(message, path=path)
        self.position = position


class SchemaViolationError(MembaseError):
    """A parsed document breaks a structural schema rule."""

    code = "schema_violation"


class ConformanceError(MembaseError):
    """Raw event data cannot be conformed to its EventTypeDef."""

    code = "conformance"


class PlanInvalidError(MembaseError):
    """A segmentation plan violates the span rules (overlap, range, order)."""

    code = "plan_invalid"


class SegmentationFailedError(MembaseError):
    """Provider never produced a valid plan within the retry budget."""

    code = "segmentation_failed"

    def __init__(self, message: str, *, raw_reply: str = "", attempts: int = 0):
        super().__init__(message)
        self.raw_reply = raw_reply
        self.attempts = attempts


class ExtractionFailedError(MembaseError):
    """Extraction reply envelope could not be parsed at all."""

    code = "extraction_failed"

    def __init__(self, message: str, *, raw_reply: str = ""):
        super().__init__(message)
        self.raw_reply = raw_reply


class PatchFormatError(MembaseError):
    """Patch text does not follow the SEARCH/REPLACE grammar."""

    code = "patch_format"


class PatchRejectedError(MembaseError):
    """Best approximate span was too far from the search text to apply."""

    code = "patch_rejected"

    def __init__(self, message: str, *, distance: int = 0, limit: int = 0):
        super().__init__(message)
        self.distance = distance
        self.limit = limit


class ProviderError(MembaseError):
    """LLM or embedding provider failed after retries."""

    code = "provider"


class StoreError(MembaseError):
    """Persistence layer failure (snapshot/restore/log)."""

    code = "store"


class NotFoundError(MembaseError):
    """Lookup target does not exist."""

    code = "not_found"


class ConflictError(MembaseError):
    """Concurrent mutation of the same session."""

    code = "conflict"


class ConfigError(MembaseError):
    """Bad configuration value."""

    code = "config"
