from __future__ import annotations

from datetime import datetime, timezone

import pytest

from membase.errors import MembaseError, NotFoundError, ProviderError
from membase.operators import (CompressionConfig, TopicTimeline, WindowSummary,
                               apply_statistical, llm_merge, materialize,
                               new_entity, reinforce, route_event,
                               render_group_key, time_compress_tick,
                               window_floor, window_label, WEEK_MS, DAY_MS)
from membase.providers import FailingLLMProvider, MockLLMProvider
from membase.schema import conform_event, parse_schema
from membase.store import MemoryStore

EDU_DOC = """
{"tenant": "edu", "version": 1,
 "events": [
   {"EventType": "ExerciseResult", "Description": "graded exercise",
    "Properties": [
      {"PropertyName": "user", "PropertyType": "string", "Description": "learner"},
      {"PropertyName": "score", "PropertyType": "number", "Description": "grade"},
      {"PropertyName": "subject", "PropertyType": "string", "Description": "subject"}
    ]}
 ],
 "entities": [
   {"EntityType": "LearnerProfile", "Description": "per-learner state",
    "Properties": [
      {"PropertyName": "avg_score", "PropertyType": "number", "Description": "running mean",
       "AggregateExpression": {"EventType": "ExerciseResult", "PropertyName": "score",
                               "Op": "AVG", "GroupBy": ["user"]}},
      {"PropertyName": "exercises_done", "PropertyType": "integer", "Description": "count",
       "AggregateExpression": {"EventType": "ExerciseResult", "PropertyName": "score",
                               "Op": "COUNT", "GroupBy": ["user"]}},
      {"PropertyName": "best_score", "PropertyType": "number", "Description": "max",
       "AggregateExpression": {"EventType": "ExerciseResult", "PropertyName": "score",
                               "Op": "MAX", "GroupBy": ["user"]}}
    ]}
 ]}
"""

TOOL_DOC = """
{"tenant": "agent", "version": 1,
 "events": [
   {"EventType": "ToolInvocation", "Description": "one tool call",
    "Properties": [
      {"PropertyName": "tool", "PropertyType": "string", "Description": "name"},
      {"PropertyName": "situation", "PropertyType": "string", "Description": "context"},
      {"PropertyName": "success", "PropertyType": "boolean", "Description": "worked"}
    ]}
 ],
 "entities": [
   {"EntityType": "ToolProfile", "Description": "per-tool knowledge",
    "Properties": [
      {"PropertyName": "usage_notes", "PropertyType": "string", "Description": "notes",
       "AggregateExpression": {"EventType": "ToolInvocation", "PropertyName": "situation",
                               "Op": "LLM_MERGE", "GroupBy": ["tool"]}},
      {"PropertyName": "calls", "PropertyType": "integer", "Description": "total calls",
       "AggregateExpression": {"EventType": "ToolInvocation", "PropertyName": "situation",
                               "Op": "COUNT", "GroupBy": ["tool"]}}
    ]}
 ]}
"""


def edu_event(score: float, user: str = "u1", ts: int = 1000, eid: str = "e1"):
    schema = parse_schema(EDU_DOC)
    return conform_event({"user": user, "score": score, "subject": "math"},
                         schema.events[0], ts, event_id=eid, source_session="s1")


def test_route_single_avg_binding():
    schema = parse_schema(EDU_DOC)
    ev = edu_event(0.8)
    bindings = route_event(ev, schema)
    avg = [b for b in bindings if b.op == "AVG"]
    assert len(avg) == 1
    assert avg[0].group_key == "user=u1"
    assert avg[0].source_value == 0.8
    assert avg[0].field == "avg_score"


def test_route_no_bindings_for_unbound_event():
    schema = parse_schema(EDU_DOC.split('"entities"')[0] + '"entities": []}')
    assert route_event(edu_event(0.5), schema) == []


def test_route_two_expressions_two_bindings():
    schema = parse_schema(TOOL_DOC)
    ev = conform_event({"tool": "web_search", "situation": "api docs lookup",
                        "success": True}, schema.events[0], 2000,
                       event_id="t1", source_session="s1")
    bindings = route_event(ev, schema)
    assert len(bindings) == 2
    assert {b.op for b in bindings} == {"LLM_MERGE", "COUNT"}
    assert all(b.group_key == "tool=web_search" for b in bindings)


def test_route_missing_group_key_skips():
    schema = parse_schema(EDU_DOC)
    ev = edu_event(0.5)
    ev.properties.pop("user")
    ev.user = None
    assert route_event(ev, schema) == []


def test_route_user_falls_back_to_event_user_field():
    schema = parse_schema(EDU_DOC)
    ev = edu_event(0.5)
    ev.properties.pop("user")
    ev.user = "u9"
    bindings = route_event(ev, schema)
    assert bindings and all(b.group_key == "user=u9" for b in bindings)


def test_route_equality_filter():
    doc = EDU_DOC.replace(
        '"Op": "AVG", "GroupBy": ["user"]',
        '"Op": "AVG", "GroupBy": ["user"], "Filters": {"equals": {"subject": "physics"}}')
    schema = parse_schema(doc)
    assert not any(b.op == "AVG" for b in route_event(edu_event(0.5), schema))


def test_route_time_window_filter():
    doc = EDU_DOC.replace(
        '"Op": "AVG", "GroupBy": ["user"]',
        '"Op": "AVG", "GroupBy": ["user"], "Filters": {"time_window_ms": 1000}')
    schema = parse_schema(doc)
    ev = edu_event(0.5, ts=10_000)
    assert any(b.op == "AVG" for b in route_event(ev, schema, now=10_500))
    assert not any(b.op == "AVG" for b in route_event(ev, schema, now=12_000))


def test_group_key_canonical_sorted():
    assert render_group_key([("user", "u1"), ("tool", "grep")]) == "tool=grep|user=u1"


# --- statistical folds -------------------------------------------------------

def entity_for(schema_doc: str, etype: str, gkey: str):
    schema = parse_schema(schema_doc)
    return new_entity(etype, gkey, schema, now=100), schema


def test_sum():
    e, schema = entity_for(EDU_DOC, "LearnerProfile", "user=u1")
    e.properties["avg_score"] = 5
    out = apply_statistical("SUM", e, "avg_score", 3)
    assert out.properties["avg_score"] == 8


def test_count_increments_regardless_of_value():
    e, _ = entity_for(EDU_DOC, "LearnerProfile", "user=u1")
    out = apply_statistical("COUNT", e, "exercises_done", "anything")
    out = apply_statistical("COUNT", out, "exercises_done", None)
    assert out.properties["exercises_done"] == 2


def test_max_initializes_from_absent():
    e, _ = entity_for(EDU_DOC, "LearnerProfile", "user=u1")
    out = apply_statistical("MAX", e, "best_score", -2)
    assert out.properties["best_score"] == -2
    out = apply_statistical("MAX", out, "best_score", -5)
    assert out.properties["best_score"] == -2


def test_avg_accumulator_exact():
    e, _ = entity_for(EDU_DOC, "LearnerProfile", "user=u1")
    for v in (0.5, 1.0, 0.9):
        e = apply_statistical("AVG", e, "avg_score", v)
    assert e.properties["avg_score"] == 2.4 / 3
    assert e.accumulators["avg_score"] == (2.4, 3)


def test_version_bumps_per_application():
    e, _ = entity_for(EDU_DOC, "LearnerProfile", "user=u1")
    v0 = e.version
    e = apply_statistical("SUM", e, "avg_score", 1)
    e = apply_statistical("SUM", e, "avg_score", 1)
    assert e.version == v0 + 2


def test_statistical_rejects_non_numeric():
    e, _ = entity_for(EDU_DOC, "LearnerProfile", "user=u1")
    with pytest.raises(MembaseError):
        apply_statistical("SUM", e, "avg_score", "oops")
    with pytest.raises(MembaseError):
        apply_statistical("MAX", e, "best_score", True)


# --- llm merge ---------------------------------------------------------------

def test_llm_merge_scripted():
    llm = MockLLMProvider([{"match": "likes hiking", "reply": "likes hiking"}])
    assert llm_merge("", ["likes hiking"], llm) == "likes hiking"


def test_llm_merge_conflict_scripted():
    llm = MockLLMProvider([{"match": "lives in Paris",
                            "reply": "lives in Paris; likes cycling"}])
    merged = llm_merge("lives in Lyon; likes cycling", ["lives in Paris"], llm)
    assert merged == "lives in Paris; likes cycling"


def test_llm_merge_provider_failure_raises():
    with pytest.raises(ProviderError):
        llm_merge("old", ["new"], FailingLLMProvider())


# --- time compression --------------------------------------------------------

def ms(y, m, d, hh=0):
    return int(datetime(y, m, d, hh, tzinfo=timezone.utc).timestamp() * 1000)


MON_W0 = ms(2023, 1, 2)   # Monday 2023-01-02
MON_W1 = ms(2023, 1, 9)
MON_W2 = ms(2023, 1, 16)


def test_window_floor_is_monday_aligned():
    assert window_floor(MON_W0, WEEK_MS) == MON_W0
    assert window_floor(MON_W0 + 3 * DAY_MS + 5, WEEK_MS) == MON_W0
    assert window_floor(MON_W1 - 1, WEEK_MS) == MON_W0
    assert window_label(MON_W0) == "2023-01-02"


def three_week_timeline():
    # 4 events in week of Jan 2, 3 in week of Jan 9, 3 in week of Jan 16
    stamps = [ms(2023, 1, 2, 10), ms(2023, 1, 3), ms(2023, 1, 5), ms(2023, 1, 7),
              ms(2023, 1, 9), ms(2023, 1, 11), ms(2023, 1, 14),
              ms(2023, 1, 16, 8), ms(2023, 1, 16, 9), ms(2023, 1, 17)]
    events = [(f"ev{i}", ts) for i, ts in enumerate(stamps)]
    return TopicTimeline(topic="tool-notes", events=events,
                         last_active=stamps[-1])


def compress_cfg():
    return CompressionConfig(window_ms=WEEK_MS,
                             inactivity_threshold_ms=2 * DAY_MS,
                             ttl_after_summary_ms=4 * WEEK_MS)


def scripted_summarizer():
    return MockLLMProvider([
        {"match": "Window: 2023-01-02", "reply": "summary of week one"},
        {"match": "Window: 2023-01-09", "reply": "summary of week two"},
    ])


def test_compress_two_full_weeks():
    timeline = three_week_timeline()
    now = ms(2023, 1, 20, 12)  # Friday; 3.2 days after last event
    updated, summaries, ttls = time_compress_tick(
        timeline, now, compress_cfg(), scripted_summarizer(),
        event_text=lambda eid: f"text of {eid}")
    assert [s.window_label for s in summaries] == ["2023-01-02", "2023-01-09"]
    assert summaries[0].event_ids == ("ev0", "ev1", "ev2", "ev3")
    assert summaries[1].event_ids == ("ev4", "ev5", "ev6")
    assert len(ttls) == 7
    assert all(deadline == now + 4 * WEEK_MS for _, deadline in ttls)
    # current-week events untouched
    ttl_ids = {eid for eid, _ in ttls}
    assert {"ev7", "ev8", "ev9"}.isdisjoint(ttl_ids)
    assert updated.summarized_ids() == {f"ev{i}" for i in range(7)}


def test_compress_active_timeline_noop():
    timeline = three_week_timeline()
    now = timeline.last_active + DAY_MS  # within inactivity threshold
    updated, summaries, ttls = time_compress_tick(
        timeline, now, compress_cfg(), scripted_summarizer(),
        event_text=lambda eid: eid)
    assert summaries == [] and ttls == [] and updated is timeline


def test_compress_empty_timeline_noop():
    timeline = TopicTimeline(topic="t")
    updated, summaries, ttls = time_compress_tick(
        timeline, ms(2023, 1, 20), compress_cfg(), scripted_summarizer(),
        event_text=lambda eid: eid)
    assert summaries == [] and ttls == []


def test_compress_never_summarizes_twice():
    timeline = three_week_timeline()
    now = ms(2023, 1, 20, 12)
    cfg = compress_cfg()
    updated, first, _ = time_compress_tick(timeline, now, cfg, scripted_summarizer(),
                                           event_text=lambda eid: eid)
    assert len(first) == 2
    again, second, ttls = time_compress_tick(updated, now + DAY_MS, cfg,
                                             scripted_summarizer(),
                                             event_text=lambda eid: eid)
    assert second == [] and ttls == []
    assert again.summarized_ids() == updated.summarized_ids()


def test_compress_provider_failure_no_state_change():
    timeline = three_week_timeline()
    before_summaries = list(timeline.summaries)
    with pytest.raises(ProviderError):
        time_compress_tick(timeline, ms(2023, 1, 20, 12), compress_cfg(),
                           FailingLLMProvider(), event_text=lambda eid: eid)
    assert timeline.summaries == before_summaries


def test_reinforce_bumps_and_unknown_errors():
    timeline = three_week_timeline()
    now = ms(2023, 2, 1)
    updated = reinforce(timeline, "ev3", now=now)
    assert updated.last_active == now
    with pytest.raises(NotFoundError):
        reinforce(timeline, "nope", now=now)


def test_compression_config_positive():
    with pytest.raises(MembaseError):
        CompressionConfig(window_ms=0)


# --- materialize -------------------------------------------------------------

def store_with(schema_doc: str) -> MemoryStore:
    store = MemoryStore()
    store.install_schema(parse_schema(schema_doc))
    return store


def test_materialize_genesis_count():
    store = store_with(EDU_DOC)
    bindings = route_event(edu_event(0.8), store.schema)
    report = materialize(bindings, store, now=5000)
    assert report.created == ["LearnerProfile|user=u1"]
    entity = store.get_entity("LearnerProfile", "user=u1")
    assert entity.properties["exercises_done"] == 1
    assert entity.properties["avg_score"] == 0.8
    assert entity.updated_at == 5000


def test_materialize_sum_fold_in_timestamp_order():
    doc = EDU_DOC.replace('"Op": "AVG"', '"Op": "SUM"')
    store = store_with(doc)
    bindings = []
    for i, score in enumerate((1.0, 2.0, 3.0)):
        bindings += route_event(edu_event(score, ts=1000 + i, eid=f"e{i}"),
                                store.schema)
    report = materialize(bindings, store, now=9000)
    entity = store.get_entity("LearnerProfile", "user=u1")
    assert entity.properties["avg_score"] == 6.0  # field now SUM-bound
    assert report.queued == 0


def test_materialize_mixed_batch_queues_merge():
    store = store_with(TOOL_DOC)
    schema = store.schema
    bindings = []
    for i in range(2):
        ev = conform_event({"tool": "grep", "situation": f"searched logs {i}",
                            "success": True}, schema.events[0], 1000 + i,
                           event_id=f"t{i}", source_session="s1")
        bindings += route_event(ev, schema)
    report = materialize(bindings, store, now=2000)
    assert report.queued == 1  # one merge entry per (entity, field)
    assert store.queue_depth() == 1
    entry = store.queue_pop()
    assert entry.kind == "merge" and entry.field == "usage_notes"
    assert entry.items == ["searched logs 0", "searched logs 1"]
    entity = store.get_entity("ToolProfile", "tool=grep")
    assert entity.properties["calls"] == 2


def test_materialize_collects_binding_errors():
    store = store_with(EDU_DOC)
    from membase.operators import RoutingBinding
    bad = RoutingBinding(entity_type="LearnerProfile", group_key="user=u1",
                         field="avg_score", op="AVG", source_value="NaNish",
                         event_id="x", timestamp=1)
    report = materialize([bad], store, now=1000)
    assert report.errors and "avg_score" in report.errors[0]


def test_materialize_time_compress_appends_timeline():
    doc = TOOL_DOC.replace('"Op": "LLM_MERGE"', '"Op": "TIME_COMPRESS"')
    store = store_with(doc)
    ev = conform_event({"tool": "grep", "situation": "weekly digest material",
                        "success": True}, store.schema.events[0], 7777,
                       event_id="t1", source_session="s1")
    materialize(route_event(ev, store.schema), store, now=8000)
    key = store.timeline_key("ToolProfile", "tool=grep", "usage_notes")
    timeline = store.timelines[key]
    assert timeline.events == [("t1", 7777)]
    assert timeline.last_active == 7777
