"""
Aging memories: windowed compression, reinforcement, expiry
===========================================================

Old, inactive topic timelines are summarized one window at a time.
Source events then carry a TTL; anything recalled before the deadline is
reinforced and survives, the rest is pruned once its summary stands in.

Run:
    python3 demos/03_compression_lifecycle.py
"""

import json

from membase import (CompressionConfig, EngineConfig, HashedBagEmbedder,
                     MemoryEngine, MemoryStore, MockLLMProvider)
from membase.operators import DAY_MS, WEEK_MS

MONDAY = 1_672_617_600_000  # 2023-01-02 00:00 UTC

SCHEMA = json.dumps({
    "tenant": "demo", "version": 1,
    "events": [
        {"EventType": "ToolInvocation", "Description": "one tool call",
         "Properties": [
             {"PropertyName": "tool", "PropertyType": "string",
              "Description": "tool name"},
             {"PropertyName": "situation", "PropertyType": "string",
              "Description": "what was attempted"}]}],
    "entities": [
        {"EntityType": "ToolHistory", "Description": "compressed history",
         "Properties": [
             {"PropertyName": "digest", "PropertyType": "string",
              "Description": "rolling windowed summary",
              "AggregateExpression": {
                  "EventType": "ToolInvocation", "PropertyName": "situation",
                  "Op": "TIME_COMPRESS", "GroupBy": ["tool"]}}]}]})

SITUATIONS = [
    "searched repo error handling paths",
    "scanned config parsing modules",
    "located logging callsites quickly",
]

PLAN = json.dumps({"topics": [{"label": "work", "spans": [[0, 2]]}]})
EXTRACTION = json.dumps({
    "events": [{"type": "ToolInvocation",
                "properties": {"tool": "grep", "situation": s}}
               for s in SITUATIONS],
    "entity_updates": []})

llm = MockLLMProvider([
    {"match": "inclusive 0-based message indices", "reply": PLAN},
    {"match": "Reply with JSON only", "reply": EXTRACTION},
    {"match": "Window:", "reply": "a week spent mapping the codebase"},
])

engine = MemoryEngine(
    MemoryStore(), llm, HashedBagEmbedder(),
    config=EngineConfig(
        flush_threshold=3,
        compression=CompressionConfig(window_ms=WEEK_MS,
                                      inactivity_threshold_ms=WEEK_MS,
                                      ttl_after_summary_ms=2 * WEEK_MS)))
engine.install_schema(SCHEMA)

# ---------------------------------------------------------------------------
# Week zero: three tool calls land on the grep timeline
# ---------------------------------------------------------------------------
for i, s in enumerate(SITUATIONS):
    engine.append_message("s1", "u1", "assistant", f"note: {s}",
                          timestamp=MONDAY + i * DAY_MS)
print("events stored:",
      sum(1 for r in engine.store.records.values() if r.kind == "event"))

# ---------------------------------------------------------------------------
# Three weeks later the timeline is cold; compression summarizes week zero
# ---------------------------------------------------------------------------
later = MONDAY + 3 * WEEK_MS
print("compress ->", engine.compress(now=later))
digest = engine.get_entity("ToolHistory", "tool=grep").properties["digest"]
print("ToolHistory digest:", digest)

# a recall touches one event; reinforcement clears its TTL
hit = engine.search("error handling paths", k=1, now=later)[0]
print("reinforced:", hit.record.id)

# ---------------------------------------------------------------------------
# Past the TTL deadline, unreinforced events give way to their summary
# ---------------------------------------------------------------------------
pruned = engine.expire(now=later + 2 * WEEK_MS + 1)
print("pruned:", pruned)
kinds = sorted(r.kind for r in engine.store.records.values())
print("remaining record kinds:", kinds)
