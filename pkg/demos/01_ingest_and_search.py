"""
Ingest a conversation, then search what the engine remembered
==============================================================

The full loop on one short support session:

1. install a schema describing which event and entity types matter,
2. append messages until the session flushes,
3. search with time and business weighting.

The LLM is a scripted mock, so the demo runs offline and prints the
same thing every time.

Run:
    python3 demos/01_ingest_and_search.py
"""

import json

from membase import (EngineConfig, HashedBagEmbedder, MemoryEngine,
                     MemoryStore, MockLLMProvider)

# ---------------------------------------------------------------------------
# Schema: one event type worth extracting, one entity type kept up to date
# ---------------------------------------------------------------------------
SCHEMA = json.dumps({
    "tenant": "demo", "version": 1,
    "events": [
        {"EventType": "ToolInvocation", "Description": "one tool call",
         "Properties": [
             {"PropertyName": "tool", "PropertyType": "string",
              "Description": "tool name"},
             {"PropertyName": "situation", "PropertyType": "string",
              "Description": "what was attempted"},
             {"PropertyName": "success", "PropertyType": "boolean",
              "Description": "whether it worked"}]},
        {"EventType": "UserPreference", "Description": "a stated preference",
         "Properties": [
             {"PropertyName": "statement", "PropertyType": "string",
              "Description": "the preference"}]},
    ],
    "entities": [
        {"EntityType": "ToolProfile", "Description": "per-tool knowledge",
         "Properties": [
             {"PropertyName": "usage_notes", "PropertyType": "string",
              "Description": "how to use the tool well",
              "AggregateExpression": {
                  "EventType": "ToolInvocation", "PropertyName": "situation",
                  "Op": "LLM_MERGE", "GroupBy": ["tool"]}},
             {"PropertyName": "calls", "PropertyType": "integer",
              "Description": "total invocations",
              "AggregateExpression": {
                  "EventType": "ToolInvocation", "PropertyName": "situation",
                  "Op": "COUNT", "GroupBy": ["tool"]}}]},
    ]})

MESSAGES = [
    ("user", "Can you find the asyncio task group docs?"),
    ("assistant", "Using web_search for python asyncio task groups."),
    ("tool", "web_search returned the official asyncio documentation."),
    ("assistant", "Found them; task groups arrived in python 3.11."),
    ("user", "Great. By the way I prefer short answers."),
    ("assistant", "Noted, keeping replies short."),
]

# ---------------------------------------------------------------------------
# Scripted provider: a segmentation plan, one extraction reply, one merge
# ---------------------------------------------------------------------------
PLAN = json.dumps({"topics": [{"label": "work",
                               "spans": [[0, len(MESSAGES) - 1]]}]})
EXTRACTION = json.dumps({
    "events": [
        {"type": "ToolInvocation", "topic": "docs",
         "properties": {"tool": "web_search",
                        "situation": "looked up asyncio task group docs",
                        "success": True}},
        {"type": "UserPreference", "topic": "style",
         "properties": {"statement": "prefers short answers"}},
    ],
    "entity_updates": []})

llm = MockLLMProvider([
    {"match": "inclusive 0-based message indices", "reply": PLAN},
    {"match": "Reply with JSON only", "reply": EXTRACTION},
    {"match": "Merge the new items",
     "reply": "good for python documentation lookups"},
])

engine = MemoryEngine(MemoryStore(), llm, HashedBagEmbedder(),
                      config=EngineConfig(flush_threshold=len(MESSAGES)))
report = engine.install_schema(SCHEMA)
print(f"schema installed, {len(report)} advisory notes")

# ---------------------------------------------------------------------------
# Appending the final message crosses the threshold and flushes
# ---------------------------------------------------------------------------
for i, (role, content) in enumerate(MESSAGES):
    outcome = engine.append_message("s1", "u1", role, content,
                                    timestamp=1_000 + i)
print(f"last append -> {outcome}")

entity = engine.get_entity("ToolProfile", "tool=web_search")
print(f"ToolProfile[tool=web_search] calls={entity.properties['calls']} "
      f"usage_notes={entity.properties['usage_notes']!r}")

# ---------------------------------------------------------------------------
# Search: fused ranking over origin, recency and business weight
# ---------------------------------------------------------------------------
for query in ("asyncio task groups", "how does the user like answers"):
    print(f"\nquery: {query}")
    for sm in engine.search(query, k=2, now=2_000):
        print(f"  {sm.s_final:.3f} [{sm.path}] {sm.record.text}")
