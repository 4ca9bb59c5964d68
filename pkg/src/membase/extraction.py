"""One-pass memory extraction.

A session accumulates in a buffer until a message-count threshold, then a
single completion call extracts every schema-defined memory type at once:
new events plus patch-style updates to existing entities. The compiled
prompt keeps everything ahead of the segments byte-stable for a fixed
schema so provider-side prefix caches stay warm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingProvider
from .errors import ExtractionFailedError, MembaseError
from .patching import Patch, parse_patch
from .prompts import DEFAULT_PROMPTS, PromptLibrary
from .providers import LLMProvider
from .repair import loads_lenient
from .schema import (EntityInstance, EventInstance, MemorySchema,
                     conform_event, event_text)
from .segmentation import (Message, Segment, Session, apply_segment_plan,
                           plan_segments, render_transcript)
from .store import MemoryStore

logger = logging.getLogger("membase.extraction")

DEFAULT_FLUSH_THRESHOLD = 20
CANDIDATE_CAP = 5
NO_CANDIDATES_MARKER = "no existing entities"
DEDUP_THRESHOLD = 0.9

EXTRACTION_FORMAT_INSTRUCTIONS = (
    "Reply with JSON only, no prose:\n"
    '{"events": [{"type": "<EventType>", "topic": "<segment topic>",'
    ' "properties": {...}}],\n'
    ' "entity_updates": [{"entity_type": "<EntityType>", "group_key":'
    ' "<k=v|...>", "field": "<property>", "patch": "<patch block>"}]}\n'
    "Each patch block uses this exact grammar (delimiters on their own"
    " lines):\n"
    "<<<< SEARCH\n"
    "text to find (may be empty for a fresh field)\n"
    "====\n"
    "replacement text\n"
    ">>>> REPLACE"
)


@dataclass
class SessionBuffer:
    session: Session
    flush_threshold: int = DEFAULT_FLUSH_THRESHOLD
    last_flush_at: int = 0


@dataclass
class ExtractionResult:
    events: list[EventInstance] = field(default_factory=list)
    entity_patches: list[tuple[str, str, str, Patch]] = field(default_factory=list)
    raw_reply: str = ""
    warnings: list[str] = field(default_factory=list)


def buffer_append(buf: SessionBuffer, msg: Message) -> str:
    """Returns "flush_triggered" once the threshold is reached."""
    expected = len(buf.session.messages)
    if msg.index != expected:
        raise MembaseError(
            f"message index {msg.index} leaves a gap (expected {expected})")
    buf.session.messages.append(msg)
    if len(buf.session.messages) >= buf.flush_threshold:
        return "flush_triggered"
    return "buffered"


def render_definitions(schema: MemorySchema) -> str:
    """Every memory type with its properties, one block per type."""
    lines: list[str] = []
    for ev in schema.events:
        lines.append(f"EVENT TYPE: {ev.event_type}")
        lines.append(f"  {ev.description}")
        for p in ev.properties:
            lines.append(f"  - {p.name} ({p.prop_type}): {p.description}")
        lines.append("")
    for ent in schema.entities:
        lines.append(f"ENTITY TYPE: {ent.entity_type}")
        lines.append(f"  {ent.description}")
        for ep in ent.properties:
            agg = ep.aggregate
            via = (f" [derived: {agg.op} of {agg.source_event_type}"
                   f".{agg.source_property}]" if agg else "")
            lines.append(f"  - {ep.prop.name} ({ep.prop.prop_type}):"
                         f" {ep.prop.description}{via}")
        lines.append("")
    return "\n".join(lines).rstrip()


def render_candidates(candidates: list[EntityInstance]) -> str:
    if not candidates:
        return NO_CANDIDATES_MARKER
    lines = []
    for ent in candidates[:CANDIDATE_CAP]:
        lines.append(f"{ent.entity_type} [{ent.group_key}]")
        for name, value in ent.properties.items():
            lines.append(f"  {name}: {value}")
    return "\n".join(lines)


def render_segments(segments: list[Segment]) -> str:
    blocks = []
    for seg in segments:
        blocks.append(f"## Topic: {seg.topic}\n{seg.text}")
    return "\n\n".join(blocks)


def compile_one_pass_prompt(schema: MemorySchema, segments: list[Segment],
                            candidates: list[EntityInstance],
                            prompts: PromptLibrary = DEFAULT_PROMPTS) -> str:
    # layout keeps schema-dependent parts first and per-session parts last
    # so the prompt prefix is byte-stable for a fixed schema
    return prompts.render("extraction",
                          definitions=render_definitions(schema),
                          format_instructions=EXTRACTION_FORMAT_INSTRUCTIONS,
                          segments=render_segments(segments),
                          candidates=render_candidates(candidates))


def _parse_event_item(item: object, schema: MemorySchema, ts: int, *,
                      event_id: str, source_session: str, user: str | None,
                      warnings: list[str]) -> EventInstance | None:
    if not isinstance(item, dict):
        warnings.append(f"event item is not an object: {item!r}")
        return None
    name = item.get("type")
    event_def = schema.event_type(name) if isinstance(name, str) else None
    if event_def is None:
        warnings.append(f"unknown event type {name!r}, item skipped")
        return None
    props = item.get("properties")
    if not isinstance(props, dict):
        warnings.append(f"event {name}: properties missing or not an object")
        return None
    topic = item.get("topic")
    if topic is not None and not isinstance(topic, str):
        topic = None
    try:
        return conform_event(props, event_def, ts, event_id=event_id,
                             source_session=source_session, topic=topic,
                             user=user, warnings=warnings)
    except MembaseError as exc:
        warnings.append(f"event {name}: {exc.message}")
        return None


def _parse_update_item(item: object, schema: MemorySchema,
                       warnings: list[str]) -> tuple[str, str, str, Patch] | None:
    if not isinstance(item, dict):
        warnings.append(f"entity update is not an object: {item!r}")
        return None
    etype = item.get("entity_type")
    ent = schema.entity_type(etype) if isinstance(etype, str) else None
    if ent is None:
        warnings.append(f"unknown entity type {etype!r}, update skipped")
        return None
    fname = item.get("field")
    ep = next((p for p in ent.properties if p.prop.name == fname), None)
    if ep is None:
        warnings.append(f"{etype}: unknown field {fname!r}, update skipped")
        return None
    if ep.prop.prop_type != "string":
        warnings.append(f"{etype}.{fname}: patches only apply to string"
                        " fields, update skipped")
        return None
    gkey = item.get("group_key")
    if not isinstance(gkey, str) or not gkey:
        warnings.append(f"{etype}.{fname}: missing group_key, update skipped")
        return None
    raw = item.get("patch")
    if not isinstance(raw, str):
        warnings.append(f"{etype}.{fname}: patch missing, update skipped")
        return None
    try:
        patch = parse_patch(raw)
    except MembaseError as exc:
        warnings.append(f"{etype}.{fname}: {exc.message}")
        return None
    return (etype, gkey, fname, patch)


def parse_extraction_reply(reply: str, schema: MemorySchema, ts: int, *,
                           source_session: str = "",
                           user: str | None = None) -> ExtractionResult:
    """Tolerant parse: malformed items are skipped with warnings; only a
    reply with no recognizable envelope fails outright."""
    try:
        data = loads_lenient(reply)
    except ValueError:
        raise ExtractionFailedError("extraction reply is not a JSON object",
                                    raw_reply=reply)
    if not isinstance(data, dict):
        raise ExtractionFailedError("extraction reply is not a JSON object",
                                    raw_reply=reply)
    result = ExtractionResult(raw_reply=reply)
    raw_events = data.get("events", [])
    if not isinstance(raw_events, list):
        result.warnings.append('"events" is not an array, ignored')
        raw_events = []
    for i, item in enumerate(raw_events):
        ev = _parse_event_item(item, schema, ts,
                               event_id=f"{source_session}:ev{i}",
                               source_session=source_session, user=user,
                               warnings=result.warnings)
        if ev is not None:
            result.events.append(ev)
    raw_updates = data.get("entity_updates", [])
    if not isinstance(raw_updates, list):
        result.warnings.append('"entity_updates" is not an array, ignored')
        raw_updates = []
    for item in raw_updates:
        parsed = _parse_update_item(item, schema, result.warnings)
        if parsed is not None:
            result.entity_patches.append(parsed)
    return result


def candidate_entities(session_text: str, store: MemoryStore,
                       embedder: EmbeddingProvider,
                       cap: int = CANDIDATE_CAP) -> list[EntityInstance]:
    """Nearest stored entities to the session text, capped."""
    qv = embedder.embed_dense(session_text)
    hits = store.dense_search(qv, cap, flt={"kind": "entity"})
    out: list[EntityInstance] = []
    for rid, _score in hits:
        rec = store.get_record(rid)
        if rec is None:
            continue
        etype = rec.metadata.get("entity_type")
        gkey = rec.metadata.get("group_key")
        if not etype or not gkey:
            continue
        ent = store.get_entity(etype, gkey)
        if ent is not None:
            out.append(ent)
    return out[:cap]


def extract_one_pass(session: Session, schema: MemorySchema,
                     store: MemoryStore | None, llm: LLMProvider,
                     embedder: EmbeddingProvider | None = None, *,
                     now: int = 0,
                     prompts: PromptLibrary = DEFAULT_PROMPTS) -> ExtractionResult:
    """Segment, then extract every memory type with ONE completion call."""
    plan = plan_segments(session, llm, prompts=prompts)
    segments = apply_segment_plan(session, plan)
    if not segments:
        return ExtractionResult()
    candidates: list[EntityInstance] = []
    if store is not None and embedder is not None:
        candidates = candidate_entities(render_transcript(session), store,
                                        embedder)
    prompt = compile_one_pass_prompt(schema, segments, candidates, prompts)
    reply = llm.complete(prompt)
    return parse_extraction_reply(reply.text, schema, now,
                                  source_session=session.id,
                                  user=session.user)


def _resolve_survivor(a: EventInstance, b: EventInstance,
                      llm: LLMProvider | None,
                      prompts: PromptLibrary) -> EventInstance:
    """Pick which of two near-duplicates survives. The provider may answer
    "A" or "B"; anything else (or no provider) keeps the longer text."""
    ta, tb = event_text(a), event_text(b)
    if llm is not None:
        try:
            reply = llm.complete(prompts.render("dedup", a=ta, b=tb))
            head = reply.text.strip().splitlines()[0].strip().upper() \
                if reply.text.strip() else ""
            if head == "A":
                return a
            if head == "B":
                return b
        except MembaseError:
            logger.warning("dedup provider failed; falling back to length rule")
    return a if len(ta) >= len(tb) else b


def _dedup_pass(events: list[EventInstance], embedder: EmbeddingProvider,
                threshold: float, llm: LLMProvider | None,
                prompts: PromptLibrary) -> list[EventInstance]:
    survivors: list[EventInstance] = []
    vecs: list[np.ndarray] = []
    for ev in events:
        v = embedder.embed_dense(event_text(ev))
        merged = False
        for i, kept in enumerate(survivors):
            if kept.event_type != ev.event_type:
                continue
            if float(vecs[i] @ v) >= threshold:
                winner = _resolve_survivor(kept, ev, llm, prompts)
                survivors[i] = winner
                vecs[i] = embedder.embed_dense(event_text(winner))
                merged = True
                break
        if not merged:
            survivors.append(ev)
            vecs.append(v)
    return survivors


def deduplicate_events(events: list[EventInstance],
                       embedder: EmbeddingProvider,
                       llm: LLMProvider | None = None, *,
                       threshold: float = DEDUP_THRESHOLD,
                       prompts: PromptLibrary = DEFAULT_PROMPTS) -> list[EventInstance]:
    """Merge near-duplicate events of the same type (cosine >= threshold).

    Stable order, never grows, and idempotent: passes repeat until no
    further merge happens.
    """
    out = list(events)
    while True:
        next_out = _dedup_pass(out, embedder, threshold, llm, prompts)
        if len(next_out) == len(out):
            return next_out
        out = next_out
