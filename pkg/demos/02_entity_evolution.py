"""
Entity evolution: aggregates fold, patches edit
===============================================

Entities are materialized views over event streams. Numeric fields fold
under a closed operator set (SUM, COUNT, MAX, AVG); narrative fields
evolve either by queued LLM merges or by direct SEARCH/REPLACE patches
located with approximate string matching, so a slightly misquoted
search block still lands on the right span.

Run:
    python3 demos/02_entity_evolution.py
"""

import json

from membase import EventInstance, MemoryStore, parse_schema
from membase.operators import materialize, route_event
from membase.patching import apply_patch, best_approx_span, parse_patch

SCHEMA = parse_schema(json.dumps({
    "tenant": "demo", "version": 1,
    "events": [
        {"EventType": "ExerciseResult", "Description": "one graded exercise",
         "Properties": [
             {"PropertyName": "score", "PropertyType": "number",
              "Description": "grade in [0, 1]"}]}],
    "entities": [
        {"EntityType": "LearnerProfile", "Description": "per-user progress",
         "Properties": [
             {"PropertyName": "exercises_done", "PropertyType": "integer",
              "Description": "how many were graded", "AggregateExpression": {
                  "EventType": "ExerciseResult", "PropertyName": "score",
                  "Op": "COUNT"}},
             {"PropertyName": "best_score", "PropertyType": "number",
              "Description": "highest grade", "AggregateExpression": {
                  "EventType": "ExerciseResult", "PropertyName": "score",
                  "Op": "MAX"}},
             {"PropertyName": "avg_score", "PropertyType": "number",
              "Description": "mean grade", "AggregateExpression": {
                  "EventType": "ExerciseResult", "PropertyName": "score",
                  "Op": "AVG"}}]}]}))

# ---------------------------------------------------------------------------
# Three graded exercises stream in; every aggregate updates incrementally
# ---------------------------------------------------------------------------
store = MemoryStore()
store.install_schema(SCHEMA)
for i, score in enumerate((0.5, 1.0, 0.9)):
    ev = EventInstance(id=f"e{i}", event_type="ExerciseResult",
                       timestamp=1_000 + i, properties={"score": score},
                       source_session="s1", user="u1")
    bindings = route_event(ev, SCHEMA, now=ev.timestamp)
    materialize(bindings, store, now=ev.timestamp)
    ent = store.get_entity("LearnerProfile", "user=u1")
    print(f"after score={score}: done={ent.properties['exercises_done']} "
          f"best={ent.properties['best_score']} "
          f"avg={ent.properties['avg_score']:.4f}")

# ---------------------------------------------------------------------------
# A patch edits narrative state in place, no extra model call needed
# ---------------------------------------------------------------------------
profile_note = ("The learner is strongest on recursion drills and "
                "still struggles with generators.")
patch = parse_patch("<<<< SEARCH\n"
                    "still struggles with generators\n"
                    "====\n"
                    "recently mastered generators\n"
                    ">>>> REPLACE")
print("\nbefore:", profile_note)
print("after: ", apply_patch(profile_note, patch))

# even a misquoted search block finds its span by edit distance
span = best_approx_span(profile_note, "stil strugles with generator")
print(f"fuzzy quote located at [{span.start}:{span.end}] "
      f"distance={span.distance}: "
      f"{profile_note[span.start:span.end]!r}")
