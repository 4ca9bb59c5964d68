"""Shared schema documents and session builders for the test suite."""

from __future__ import annotations

import json

from membase.schema import parse_schema
from membase.segmentation import make_session

AGENT_DOC = json.dumps({
    "tenant": "agent", "version": 1,
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


def agent_schema():
    return parse_schema(AGENT_DOC)


def tool_session(session_id: str = "s1", user: str = "u1"):
    msgs = [
        ("user", "Can you find the asyncio task group docs?", 1000),
        ("assistant", "Using web_search for python asyncio task groups.", 2000),
        ("tool", "web_search returned the official asyncio documentation.", 3000),
        ("assistant", "Found them; task groups arrived in python 3.11.", 4000),
        ("user", "Great. By the way I prefer short answers.", 5000),
        ("assistant", "Noted, keeping replies short.", 6000),
    ]
    return make_session(session_id, user, msgs)


def full_cover_plan_reply(n: int, topic: str = "work") -> str:
    return json.dumps({"topics": [{"label": topic, "spans": [[0, n - 1]]}]})
