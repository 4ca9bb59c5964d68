"""membase: an embedded memory-base management engine.

Schema-defined events and entities are extracted from conversation
sessions in one model call, folded into evolving entity views, indexed
for hybrid and keyword-graph retrieval, compressed over time windows,
and persisted through a snapshot-plus-log store.
"""

__version__ = "0.1.0"

from .embedding import HashedBagEmbedder
from .engine import EngineConfig, FlushSummary, MemoryEngine
from .errors import (ConfigError, ConflictError, ConformanceError,
                     ExtractionFailedError, MembaseError, NotFoundError,
                     PatchFormatError, PatchRejectedError, PlanInvalidError,
                     ProviderError, SchemaSyntaxError, SchemaViolationError,
                     SegmentationFailedError, StoreError)
from .operators import CompressionConfig
from .patching import Patch, SpanMatch, apply_patch, apply_patches, \
    best_approx_span, parse_patch
from .providers import LLMReply, MockLLMProvider, TokenUsage
from .retrieval import RecallConfig, RerankConfig, ScoredMemory
from .schema import (EntityInstance, EventInstance, MemorySchema, Violation,
                     parse_schema, serialize_schema, validate_schema)
from .segmentation import Message, Session, make_session
from .store import MemoryRecord, MemoryStore

__all__ = [
    "__version__",
    "HashedBagEmbedder",
    "EngineConfig", "FlushSummary", "MemoryEngine",
    "ConfigError", "ConflictError", "ConformanceError",
    "ExtractionFailedError", "MembaseError", "NotFoundError",
    "PatchFormatError", "PatchRejectedError", "PlanInvalidError",
    "ProviderError", "SchemaSyntaxError", "SchemaViolationError",
    "SegmentationFailedError", "StoreError",
    "CompressionConfig",
    "Patch", "SpanMatch", "apply_patch", "apply_patches",
    "best_approx_span", "parse_patch",
    "LLMReply", "MockLLMProvider", "TokenUsage",
    "RecallConfig", "RerankConfig", "ScoredMemory",
    "EntityInstance", "EventInstance", "MemorySchema", "Violation",
    "parse_schema", "serialize_schema", "validate_schema",
    "Message", "Session", "make_session",
    "MemoryRecord", "MemoryStore",
]
