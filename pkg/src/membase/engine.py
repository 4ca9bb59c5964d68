"""End-to-end memory engine.

Ties the pipeline together: buffered sessions flush through segmentation
and one-pass extraction, events become searchable records and fold into
entities, merge work queues for asynchronous consolidation, and search
runs fused multi-path recall with optional late-interaction reranking.
Every flush is idempotent via a deterministic id derived from the session
and its cumulative message count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import threading
import time
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace

from .embedding import EmbeddingProvider, tokenize
from .errors import (ConflictError, MembaseError, NotFoundError,
                     ProviderError, SchemaViolationError)
from .extraction import (DEDUP_THRESHOLD, DEFAULT_FLUSH_THRESHOLD,
                         SessionBuffer, buffer_append, deduplicate_events,
                         extract_one_pass)
from .operators import (CompressionConfig, llm_merge, materialize, new_entity,
                        reinforce, route_event, time_compress_tick)
from .patching import apply_patches
from .prompts import DEFAULT_PROMPTS, PromptLibrary
from .providers import LLMProvider
from .retrieval import RecallConfig, ScoredMemory, recall, rerank
from .schema import (EntityInstance, EventInstance, MemorySchema, Violation,
                     entity_text, event_text, parse_schema, schema_is_valid,
                     validate_schema)
from .segmentation import Message, Session
from .store import MemoryStore, build_record

logger = logging.getLogger("membase.engine")

MAX_MERGE_ATTEMPTS = 3
KEYWORDS_PROPERTY = "keywords"
MAX_KEYWORDS_PER_RECORD = 8

# small closed-class stoplist for the keyword-graph heuristic
STOPWORDS = frozenset("""
a an and are as at be but by for from had has have he her his i in is it its
me my of on or our she so that the their them they this to was we were will
with you your not no yes do does did done been what when where which who whom
why how can could should would may might must shall
""".split())


@dataclass(frozen=True)
class EngineConfig:
    flush_threshold: int = DEFAULT_FLUSH_THRESHOLD
    dedup_threshold: float = DEDUP_THRESHOLD
    llm_dedup: bool = False
    inline_consolidation: bool = True
    recall: RecallConfig = field(default_factory=RecallConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)


@dataclass
class FlushSummary:
    status: str  # "flushed", "duplicate", "empty"
    flush_id: str = ""
    event_ids: list[str] = field(default_factory=list)
    patched_entities: list[str] = field(default_factory=list)
    created_entities: list[str] = field(default_factory=list)
    updated_entities: list[str] = field(default_factory=list)
    queued: int = 0
    warnings: list[str] = field(default_factory=list)


def extract_keywords(ev: EventInstance, text: str) -> list[str]:
    """Explicit phrases from a "keywords" property, then content tokens."""
    out: list[str] = []
    explicit = ev.properties.get(KEYWORDS_PROPERTY)
    if isinstance(explicit, str):
        for phrase in explicit.split(","):
            phrase = phrase.strip().lower()
            if phrase:
                out.append(phrase)
    for tok in tokenize(text):
        if len(out) >= MAX_KEYWORDS_PER_RECORD:
            break
        if len(tok) < 3 or tok in STOPWORDS or tok in out:
            continue
        out.append(tok)
    return out[:MAX_KEYWORDS_PER_RECORD]


def now_ms() -> int:
    return int(time.time() * 1000)


class MemoryEngine:
    def __init__(self, store: MemoryStore, llm: LLMProvider,
                 embedder: EmbeddingProvider, *,
                 config: EngineConfig | None = None,
                 prompts: PromptLibrary = DEFAULT_PROMPTS):
        self.store = store
        self.llm = llm
        self.embedder = embedder
        self.config = config or EngineConfig()
        self.prompts = prompts
        self.buffers: dict[str, SessionBuffer] = {}
        self.buffer_totals: dict[str, int] = {}
        self._buffers_lock = threading.Lock()
        self._flush_locks: dict[str, threading.Lock] = {}

    # ------------------------------------------------------------ schema --

    def install_schema(self, doc: str) -> list[Violation]:
        schema = parse_schema(doc)
        report = validate_schema(schema)
        if not schema_is_valid(report):
            err = SchemaViolationError("schema has blocking violations")
            err.violations = report
            raise err
        self.store.install_schema(schema)
        return report

    @property
    def schema(self) -> MemorySchema | None:
        return self.store.schema

    def _require_schema(self) -> MemorySchema:
        if self.store.schema is None:
            raise MembaseError("no schema installed")
        return self.store.schema

    # --------------------------------------------------------- ingestion --

    def _flush_lock(self, session_id: str) -> threading.Lock:
        with self._buffers_lock:
            return self._flush_locks.setdefault(session_id, threading.Lock())

    def append_message(self, session_id: str, user: str, role: str,
                       content: str, timestamp: int | None = None) -> dict:
        self._require_schema()
        ts = now_ms() if timestamp is None else timestamp
        with self._buffers_lock:
            buf = self.buffers.get(session_id)
            if buf is None:
                buf = SessionBuffer(
                    session=Session(id=session_id, user=user),
                    flush_threshold=self.config.flush_threshold)
                self.buffers[session_id] = buf
            msg = Message(index=len(buf.session.messages), role=role,
                          content=content, timestamp=ts)
            outcome = buffer_append(buf, msg)
            self.buffer_totals[session_id] = \
                self.buffer_totals.get(session_id, 0) + 1
        if outcome == "flush_triggered":
            summary = self.flush(session_id, now=ts)
            return {"status": "flushed", "events": len(summary.event_ids),
                    "flush_id": summary.flush_id}
        return {"status": "buffered",
                "buffered": len(buf.session.messages)}

    def flush(self, session_id: str, *, now: int | None = None) -> FlushSummary:
        """Run the extraction pipeline once over the session's buffer.

        Idempotent: a (session, cumulative message count) pair maps to one
        deterministic flush id; replays short-circuit. Concurrent flushes
        of the same session conflict.
        """
        schema = self._require_schema()
        with self._buffers_lock:
            buf = self.buffers.get(session_id)
            total = self.buffer_totals.get(session_id, 0)
        if buf is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        lock = self._flush_lock(session_id)
        if not lock.acquire(blocking=False):
            raise ConflictError(
                f"a flush for session {session_id!r} is already running")
        try:
            session = buf.session
            if not session.messages:
                return FlushSummary(status="empty")
            if now is None:
                now = max(m.timestamp for m in session.messages)
            flush_id = hashlib.sha256(
                f"{session_id}:{total}".encode()).hexdigest()[:32]
            if self.store.seen_flush(flush_id):
                return FlushSummary(status="duplicate", flush_id=flush_id)

            result = extract_one_pass(session, schema, self.store, self.llm,
                                      self.embedder, now=now,
                                      prompts=self.prompts)
            summary = FlushSummary(status="flushed", flush_id=flush_id,
                                   warnings=list(result.warnings))
            events = deduplicate_events(
                result.events, self.embedder,
                self.llm if self.config.llm_dedup else None,
                threshold=self.config.dedup_threshold, prompts=self.prompts)
            # re-key against the cumulative count so ids never collide
            # across batches of the same session
            events = [dc_replace_event(ev, f"{session_id}:{total}:e{i}")
                      for i, ev in enumerate(events)]
            touched: dict[tuple[str, str], None] = {}

            for ev in events:
                self._store_event(ev, schema, summary)
            bindings = []
            for ev in events:
                bindings.extend(route_event(ev, schema, now=now))
            # an explicit patch on a field supersedes queueing a merge for
            # the same field in this batch
            patched_targets = {(e, g, f) for e, g, f, _ in result.entity_patches}
            bindings = [b for b in bindings
                        if not (b.op == "LLM_MERGE" and
                                (b.entity_type, b.group_key, b.field)
                                in patched_targets)]
            report = materialize(bindings, self.store, now=now)
            summary.created_entities = report.created
            summary.updated_entities = report.updated
            summary.queued = report.queued
            summary.warnings.extend(report.errors)
            for eid in report.created + report.updated:
                etype, _, gkey = eid.partition("|")
                touched[(etype, gkey)] = None

            self._apply_entity_patches(result.entity_patches, schema,
                                       summary, touched, now)
            for etype, gkey in touched:
                ent = self.store.get_entity(etype, gkey)
                if ent is not None:
                    self._store_entity_record(ent, now)

            if self.config.inline_consolidation:
                drained = self.run_consolidation(now=now)
                summary.warnings.extend(drained.get("warnings", []))
            self.store.record_flush(flush_id)
            session.messages.clear()
            buf.last_flush_at = now
            return summary
        finally:
            lock.release()

    def _store_event(self, ev: EventInstance, schema: MemorySchema,
                     summary: FlushSummary) -> None:
        event_def = schema.event_type(ev.event_type)
        text = event_text(ev, event_def)
        meta = {"event_type": ev.event_type, "timestamp": ev.timestamp,
                "event_id": ev.id, "session": ev.source_session}
        if ev.user:
            meta["user"] = ev.user
        if ev.topic:
            meta["topic"] = ev.topic
        if event_def and event_def.instance_weight_field:
            w = ev.properties.get(event_def.instance_weight_field)
            if isinstance(w, (int, float)) and not isinstance(w, bool):
                meta["weight"] = min(1.0, max(0.0, float(w)))
        rec = build_record(f"ev:{ev.id}", "event", text, self.embedder,
                           metadata=meta)
        self.store.upsert_record(rec)
        keywords = extract_keywords(ev, text)
        if keywords:
            self.store.keyword_update(rec.id, keywords)
        summary.event_ids.append(ev.id)

    def _apply_entity_patches(self, patches, schema, summary, touched, now):
        by_target: dict[tuple[str, str], list] = {}
        for etype, gkey, fname, patch in patches:
            by_target.setdefault((etype, gkey), []).append((fname, patch))
        for (etype, gkey), pairs in by_target.items():
            ent_def = schema.entity_type(etype)
            entity = self.store.get_entity(etype, gkey)
            if entity is None:
                entity = new_entity(etype, gkey, schema, now=now)
            try:
                patched = apply_patches(entity, pairs, ent_def, now=now,
                                        warnings=summary.warnings)
            except MembaseError as exc:
                summary.warnings.append(f"{etype}[{gkey}]: {exc.message}")
                continue
            self.store.put_entity(patched)
            summary.patched_entities.append(patched.id)
            touched[(etype, gkey)] = None

    def _store_entity_record(self, entity: EntityInstance, now: int) -> None:
        rec = build_record(f"ent:{entity.id}", "entity", entity_text(entity),
                           self.embedder,
                           metadata={"entity_type": entity.entity_type,
                                     "group_key": entity.group_key,
                                     "timestamp": now})
        self.store.upsert_record(rec)

    # ------------------------------------------------------------ search --

    def search(self, query: str, *, k: int | None = None,
               w_time: float | None = None, w_busi: float | None = None,
               rerank_enabled: bool | None = None,
               now: int | None = None) -> list[ScoredMemory]:
        cfg = self.config.recall
        overrides = {}
        if k is not None:
            overrides["final_k"] = k
        if w_time is not None:
            overrides["w_time"] = w_time
        if w_busi is not None:
            overrides["w_busi"] = w_busi
        if rerank_enabled is not None:
            overrides["rerank"] = dataclasses.replace(
                cfg.rerank, enabled=rerank_enabled)
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        if now is None:
            now = now_ms()
        candidates = recall(query, cfg, self.store, self.embedder, now=now)
        results = rerank(self.embedder.embed_tokens(query), candidates, cfg)
        self._reinforce_hits(results, now)
        return results

    def _reinforce_hits(self, results: list[ScoredMemory], now: int) -> None:
        """Accessed events resist expiry and revive their timelines."""
        for sm in results:
            if sm.record.kind != "event":
                continue
            self.store.mark_reinforced(sm.record.id, now)
            event_id = sm.record.metadata.get("event_id")
            if not event_id:
                continue
            for key, timeline in list(self.store.timelines.items()):
                if any(eid == event_id for eid, _ in timeline.events):
                    self.store.put_timeline(
                        key, reinforce(timeline, event_id, now=now))

    def get_entity(self, entity_type: str, group_key: str) -> EntityInstance:
        ent = self.store.get_entity(entity_type, group_key)
        if ent is None:
            raise NotFoundError(
                f"entity {entity_type}[{group_key}] not found")
        return ent

    # ------------------------------------------------------- maintenance --

    def compress(self, *, now: int | None = None) -> dict:
        """Tick windowed compression across every timeline."""
        if now is None:
            now = now_ms()
        cfg = self.config.compression
        counts = {"timelines": 0, "summaries": 0, "ttls": 0}
        for key in sorted(self.store.timelines):
            timeline = self.store.timelines[key]
            updated, summaries, ttls = time_compress_tick(
                timeline, now, cfg, self.llm,
                event_text=self._event_text_by_id, prompts=self.prompts)
            if not summaries:
                continue
            counts["timelines"] += 1
            self.store.put_timeline(key, updated)
            for s in summaries:
                sum_id = f"sum:{key}:{s.window_label}"
                rec = build_record(sum_id, "summary", s.text, self.embedder,
                                   metadata={"timeline": key,
                                             "window": s.window_label,
                                             "timestamp": now})
                self.store.upsert_record(rec)
                counts["summaries"] += 1
                for eid in s.event_ids:
                    self._cover_event(eid, sum_id)
            for eid, deadline in ttls:
                rid = f"ev:{eid}"
                if self.store.get_record(rid) is not None:
                    self.store.set_ttl(rid, deadline)
                    counts["ttls"] += 1
            self._refresh_compressed_entity(key, updated, now)
        return counts

    def _event_text_by_id(self, event_id: str) -> str:
        rec = self.store.get_record(f"ev:{event_id}")
        return rec.text if rec is not None else event_id

    def _cover_event(self, event_id: str, summary_id: str) -> None:
        rec = self.store.get_record(f"ev:{event_id}")
        if rec is None:
            return
        meta = dict(rec.metadata)
        meta["summary_id"] = summary_id
        self.store.upsert_record(dataclasses.replace(rec, metadata=meta))

    def _refresh_compressed_entity(self, key: str, timeline, now: int) -> None:
        # group keys may contain "/" in values; field names cannot
        etype, rest = key.split("/", 1)
        gkey, fname = rest.rsplit("/", 1)
        schema = self._require_schema()
        entity = self.store.get_entity(etype, gkey)
        if entity is None:
            entity = new_entity(etype, gkey, schema, now=now)
        text = "\n".join(f"[{s.window_label}] {s.text}"
                         for s in timeline.summaries)
        props = dict(entity.properties)
        props[fname] = text
        updated = dataclasses.replace(entity, properties=props,
                                      version=entity.version + 1,
                                      updated_at=now)
        self.store.put_entity(updated)
        self._store_entity_record(updated, now)

    def expire(self, *, now: int | None = None) -> list[str]:
        return self.store.expire(now_ms() if now is None else now)

    def run_consolidation(self, *, now: int | None = None,
                          max_entries: int | None = None) -> dict:
        """Drain queued LLM_MERGE work; failures requeue up to a cap."""
        if now is None:
            now = now_ms()
        budget = self.store.queue_depth() if max_entries is None else max_entries
        merged, requeued, dropped = 0, 0, 0
        warnings: list[str] = []
        while budget > 0:
            budget -= 1
            entry = self.store.queue_pop()
            if entry is None:
                break
            entity = self.store.get_entity(entry.entity_type, entry.group_key)
            if entity is None:
                entity = new_entity(entry.entity_type, entry.group_key,
                                    self._require_schema(), now=now)
            old = entity.properties.get(entry.field) or ""
            try:
                text = llm_merge(old, entry.items, self.llm,
                                 prompts=self.prompts)
            except ProviderError as exc:
                if entry.attempts + 1 >= MAX_MERGE_ATTEMPTS:
                    dropped += 1
                    warnings.append(
                        f"merge {entry.id} dropped after "
                        f"{entry.attempts + 1} attempts: {exc.message}")
                else:
                    self.store.queue_push(
                        dataclasses.replace(entry, attempts=entry.attempts + 1))
                    requeued += 1
                continue
            props = dict(entity.properties)
            props[entry.field] = text
            updated = dataclasses.replace(entity, properties=props,
                                          version=entity.version + 1,
                                          updated_at=now)
            self.store.put_entity(updated)
            self._store_entity_record(updated, now)
            merged += 1
        return {"merged": merged, "requeued": requeued, "dropped": dropped,
                "warnings": warnings}

    # -------------------------------------------------------- durability --

    def snapshot(self) -> None:
        self.store.snapshot()


def dc_replace_event(ev: EventInstance, new_id: str) -> EventInstance:
    return EventInstance(id=new_id, event_type=ev.event_type,
                         timestamp=ev.timestamp, properties=ev.properties,
                         source_session=ev.source_session, topic=ev.topic,
                         ttl_deadline=ev.ttl_deadline, user=ev.user)
