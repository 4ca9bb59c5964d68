"""Event to entity materialization: routing, statistical folds, LLM merge,
and windowed timeline compression with TTLs.

Statistical operators run synchronously and never touch a model. LLM_MERGE
and TIME_COMPRESS work is enqueued and consumed asynchronously.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace as dc_replace
from datetime import datetime, timezone
from typing import Any, Callable, TYPE_CHECKING

from .errors import MembaseError, NotFoundError
from .prompts import DEFAULT_PROMPTS, PromptLibrary
from .providers import LLMProvider
from .schema import (STATISTICAL_OPS, EntityInstance, EventInstance,
                     MemorySchema)

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .store import MemoryStore

logger = logging.getLogger("membase.operators")

DAY_MS = 86_400_000
WEEK_MS = 7 * DAY_MS
# epoch (1970-01-01) was a Thursday; shift so 7-day windows start on
# Monday 00:00 UTC (1969-12-29 was a Monday)
_MONDAY_EPOCH_OFFSET_MS = -3 * DAY_MS


@dataclass(frozen=True)
class RoutingBinding:
    entity_type: str
    group_key: str
    field: str
    op: str
    source_value: Any
    event_id: str
    timestamp: int


@dataclass(frozen=True)
class WindowSummary:
    window_label: str
    text: str
    created_at: int
    event_ids: tuple[str, ...]


@dataclass
class TopicTimeline:
    topic: str
    events: list[tuple[str, int]] = field(default_factory=list)  # (id, ts), sorted
    last_active: int = 0
    summaries: list[WindowSummary] = field(default_factory=list)

    def summarized_ids(self) -> set[str]:
        out: set[str] = set()
        for s in self.summaries:
            out.update(s.event_ids)
        return out


@dataclass(frozen=True)
class CompressionConfig:
    window_ms: int = WEEK_MS
    inactivity_threshold_ms: int = WEEK_MS      # 1 window
    ttl_after_summary_ms: int = 4 * WEEK_MS     # 4 windows

    def __post_init__(self):
        if min(self.window_ms, self.inactivity_threshold_ms,
               self.ttl_after_summary_ms) <= 0:
            raise MembaseError("compression durations must be positive")


@dataclass
class QueueEntry:
    id: str
    kind: str  # "merge" or "compress"
    entity_type: str
    group_key: str
    field: str
    items: list[str]
    created_at: int
    attempts: int = 0


def window_floor(ts: int, window_ms: int) -> int:
    """Start of the window containing ts, Monday-aligned for 7-day windows."""
    return ((ts - _MONDAY_EPOCH_OFFSET_MS) // window_ms) * window_ms \
        + _MONDAY_EPOCH_OFFSET_MS


def window_label(start_ms: int) -> str:
    return datetime.fromtimestamp(start_ms / 1000, tz=timezone.utc).strftime("%Y-%m-%d")


def _resolve_group_value(ev: EventInstance, key: str) -> str | None:
    if key in ev.properties:
        return str(ev.properties[key])
    if key == "user":
        return ev.user
    if key == "topic":
        return ev.topic
    return None


def render_group_key(pairs: list[tuple[str, str]]) -> str:
    return "|".join(f"{k}={v}" for k, v in sorted(pairs))


def route_event(ev: EventInstance, schema: MemorySchema, *,
                now: int | None = None) -> list[RoutingBinding]:
    """One binding per AggregateExpression the event matches.

    Filters are evaluated here; events missing a group-by value produce no
    binding for that expression.
    """
    at = ev.timestamp if now is None else now
    out: list[RoutingBinding] = []
    for entity_def in schema.entities:
        for ep in entity_def.properties:
            agg = ep.aggregate
            if agg.source_event_type != ev.event_type:
                continue
            if agg.source_property not in ev.properties:
                continue
            if agg.filters is not None:
                if any(ev.properties.get(k) != v for k, v in agg.filters.equals):
                    continue
                win = agg.filters.time_window_ms
                if win is not None and at - ev.timestamp > win:
                    continue
            pairs: list[tuple[str, str]] = []
            for key in agg.group_by:
                value = _resolve_group_value(ev, key)
                if value is None:
                    pairs = []
                    break
                pairs.append((key, value))
            if not pairs:
                continue
            out.append(RoutingBinding(
                entity_type=entity_def.entity_type,
                group_key=render_group_key(pairs),
                field=ep.prop.name, op=agg.op,
                source_value=ev.properties[agg.source_property],
                event_id=ev.id, timestamp=ev.timestamp))
    return out


def apply_statistical(op: str, entity: EntityInstance, field_name: str,
                      value: Any) -> EntityInstance:
    """Fold one value into an entity field; returns a new instance, version +1."""
    if op not in STATISTICAL_OPS:
        raise MembaseError(f"{op} is not a statistical operator")
    if op != "COUNT":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MembaseError(f"{op} needs a numeric value, got {type(value).__name__}")
    props = dict(entity.properties)
    accs = dict(entity.accumulators)
    old = props.get(field_name)
    if op == "SUM":
        props[field_name] = (old or 0) + value
    elif op == "COUNT":
        props[field_name] = (old or 0) + 1
    elif op == "MAX":
        props[field_name] = value if old is None else max(old, value)
    elif op == "AVG":
        s, c = accs.get(field_name, (0.0, 0))
        s, c = s + float(value), c + 1
        accs[field_name] = (s, c)
        props[field_name] = s / c
    return dc_replace(entity, properties=props, accumulators=accs,
                      version=entity.version + 1)


def new_entity(entity_type: str, group_key: str, schema: MemorySchema, *,
               now: int) -> EntityInstance:
    """Fresh instance: string fields empty, numeric fields absent (None).

    Numeric fields must start absent, not zero, so MAX over negative
    values initializes correctly.
    """
    entity_def = schema.entity_type(entity_type)
    props: dict[str, Any] = {}
    for ep in (entity_def.properties if entity_def else ()):
        props[ep.prop.name] = "" if ep.prop.prop_type == "string" else None
    return EntityInstance(id=f"{entity_type}|{group_key}", entity_type=entity_type,
                          group_key=group_key, properties=props, version=0,
                          updated_at=now)


def llm_merge(old: str, new_items: list[str], llm: LLMProvider, *,
              prompts: PromptLibrary = DEFAULT_PROMPTS) -> str:
    """Single scripted/model call that folds new items into stored text."""
    prompt = prompts.render("merge", old=old or "(empty)",
                            items="\n".join(f"- {it}" for it in new_items))
    return llm.complete(prompt).text.strip()


def time_compress_tick(timeline: TopicTimeline, now: int, cfg: CompressionConfig,
                       llm: LLMProvider, *,
                       event_text: Callable[[str], str],
                       prompts: PromptLibrary = DEFAULT_PROMPTS,
                       ) -> tuple[TopicTimeline, list[WindowSummary], list[tuple[str, int]]]:
    """Summarize full aged windows of an inactive timeline.

    Returns (updated timeline, new summaries, [(event_id, ttl_deadline)]).
    Provider failure leaves every input untouched (summaries are generated
    before any state mutates). Events already covered by a summary are
    never summarized again.
    """
    if not timeline.events:
        return timeline, [], []
    if now - timeline.last_active <= cfg.inactivity_threshold_ms:
        return timeline, [], []
    current_start = window_floor(now, cfg.window_ms)
    done = timeline.summarized_ids()
    groups: dict[int, list[tuple[str, int]]] = {}
    for event_id, ts in timeline.events:
        if ts >= current_start or event_id in done:
            continue
        groups.setdefault(window_floor(ts, cfg.window_ms), []).append((event_id, ts))

    new_summaries: list[WindowSummary] = []
    ttls: list[tuple[str, int]] = []
    for start in sorted(groups):
        members = groups[start]
        label = window_label(start)
        body = "\n".join(f"- {event_text(eid)}" for eid, _ in members)
        prompt = prompts.render("compress", window_label=label,
                                topic=timeline.topic, events=body)
        text = llm.complete(prompt).text.strip()
        new_summaries.append(WindowSummary(
            window_label=label, text=text, created_at=now,
            event_ids=tuple(eid for eid, _ in members)))
        deadline = now + cfg.ttl_after_summary_ms
        ttls.extend((eid, deadline) for eid, _ in members)

    if not new_summaries:
        return timeline, [], []
    updated = TopicTimeline(topic=timeline.topic, events=list(timeline.events),
                            last_active=timeline.last_active,
                            summaries=timeline.summaries + new_summaries)
    return updated, new_summaries, ttls


def reinforce(timeline: TopicTimeline, event_id: str, *, now: int) -> TopicTimeline:
    """A recall touched this event: bump activity; caller clears its TTL."""
    if all(eid != event_id for eid, _ in timeline.events):
        raise NotFoundError(f"event {event_id!r} not in timeline {timeline.topic!r}")
    return TopicTimeline(topic=timeline.topic, events=list(timeline.events),
                         last_active=max(timeline.last_active, now),
                         summaries=list(timeline.summaries))


@dataclass
class MaterializeReport:
    created: list[str] = field(default_factory=list)
    updated: list[str] = field(default_factory=list)
    queued: int = 0
    errors: list[str] = field(default_factory=list)


def materialize(bindings: list[RoutingBinding], store: "MemoryStore",
                *, now: int) -> MaterializeReport:
    """Apply a batch of bindings to the entity store.

    Statistical ops fold synchronously in timestamp order; LLM_MERGE and
    TIME_COMPRESS become queue entries / timeline appends for the
    background consolidation worker. Per-binding errors are collected,
    never fatal.
    """
    report = MaterializeReport()
    by_target: dict[tuple[str, str], list[RoutingBinding]] = {}
    for b in bindings:
        by_target.setdefault((b.entity_type, b.group_key), []).append(b)

    for (entity_type, group_key), batch in by_target.items():
        batch.sort(key=lambda b: (b.timestamp, b.event_id))
        entity = store.get_entity(entity_type, group_key)
        if entity is None:
            entity = new_entity(entity_type, group_key, store.schema, now=now)
            report.created.append(entity.id)
        merge_items: dict[str, list[RoutingBinding]] = {}
        for b in batch:
            if b.op in STATISTICAL_OPS:
                try:
                    entity = apply_statistical(b.op, entity, b.field, b.source_value)
                    entity.updated_at = now
                except MembaseError as exc:
                    report.errors.append(f"{entity.id}.{b.field}: {exc.message}")
            elif b.op == "LLM_MERGE":
                merge_items.setdefault(b.field, []).append(b)
            elif b.op == "TIME_COMPRESS":
                store.timeline_append(entity_type, group_key, b.field,
                                      b.event_id, b.timestamp)
        for field_name, items in merge_items.items():
            store.queue_push(QueueEntry(
                id=f"merge:{entity.id}:{field_name}:{items[0].event_id}",
                kind="merge", entity_type=entity_type, group_key=group_key,
                field=field_name, items=[str(b.source_value) for b in items],
                created_at=now))
            report.queued += 1
        store.put_entity(entity)
        if entity.id not in report.created:
            report.updated.append(entity.id)
    return report
