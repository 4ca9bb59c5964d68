"""Two-phase session segmentation: saliency filtering + topic partitioning.

One LLM call proposes a plan (topic -> list of inclusive message-index
spans); applying the plan to the session is pure and deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .errors import PlanInvalidError, SegmentationFailedError
from .prompts import DEFAULT_PROMPTS, PromptLibrary
from .providers import LLMProvider
from .repair import loads_lenient

logger = logging.getLogger("membase.segmentation")

ROLES = ("user", "assistant", "system", "tool")

# marks elided material between non-contiguous spans of one topic
SEGMENT_GAP_MARKER = "…"

MAX_PLAN_RETRIES = 2

PLAN_FORMAT_INSTRUCTIONS = (
    'Reply with JSON only, no prose:\n'
    '{"topics": [{"label": "<short topic label>", "spans": [[start, end]]}]}\n'
    "Each [start, end] pair holds inclusive 0-based message indices.\n"
    "Spans must not overlap, within or across topics.\n"
    "Leave non-salient messages out of every span."
)


@dataclass(frozen=True)
class Message:
    index: int
    role: str
    content: str
    timestamp: int


@dataclass
class Session:
    id: str
    user: str
    messages: list[Message] = field(default_factory=list)


@dataclass(frozen=True)
class TopicSpan:
    label: str
    spans: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SegmentPlan:
    topics: tuple[TopicSpan, ...]


@dataclass(frozen=True)
class Segment:
    topic: str
    text: str
    source_spans: tuple[tuple[int, int], ...]
    session_id: str


def make_session(session_id: str, user: str,
                 messages: list[tuple[str, str, int]]) -> Session:
    """Build a Session from (role, content, timestamp) triples."""
    out = Session(id=session_id, user=user)
    for i, (role, content, ts) in enumerate(messages):
        if role not in ROLES:
            raise PlanInvalidError(f"unknown role {role!r} at message {i}")
        if not content and role != "system":
            raise PlanInvalidError(f"empty content at message {i} (role {role})")
        out.messages.append(Message(index=i, role=role, content=content, timestamp=ts))
    return out


def render_transcript(session: Session) -> str:
    return "\n".join(f"{m.index}. {m.role}: {m.content}" for m in session.messages)


def validate_plan(session: Session, plan: SegmentPlan) -> list[str]:
    """Out-of-range, overlap, start>end and unsorted-span violations."""
    n = len(session.messages)
    out: list[str] = []
    covered: set[int] = set()
    for topic in plan.topics:
        prev_start = -1
        for (start, end) in topic.spans:
            if start > end:
                out.append(f"topic {topic.label!r}: span ({start},{end}) has start > end")
                continue
            if start < 0 or end >= n:
                out.append(f"topic {topic.label!r}: span ({start},{end}) outside 0..{n - 1}")
                continue
            if start <= prev_start:
                out.append(f"topic {topic.label!r}: spans not sorted ascending")
            prev_start = start
            overlap = covered.intersection(range(start, end + 1))
            if overlap:
                out.append(f"topic {topic.label!r}: span ({start},{end}) overlaps "
                           f"at index {min(overlap)}")
            covered.update(range(start, end + 1))
    return out


def _parse_plan_reply(reply: str) -> SegmentPlan:
    data = loads_lenient(reply)
    if not isinstance(data, dict) or "topics" not in data:
        raise ValueError('reply missing top-level "topics"')
    topics = []
    for item in data["topics"]:
        label = str(item["label"])
        spans = tuple((int(a), int(b)) for a, b in item["spans"])
        topics.append(TopicSpan(label=label, spans=spans))
    return SegmentPlan(topics=tuple(topics))


def plan_segments(session: Session, llm: LLMProvider, *,
                  prompts: PromptLibrary = DEFAULT_PROMPTS) -> SegmentPlan:
    """One two-phase LLM call; invalid plans retried at most twice.

    The retry prompt carries the violation list so a capable model can
    correct itself; the scripted mock simply replays, which surfaces the
    error deterministically.
    """
    if not session.messages:
        raise PlanInvalidError("cannot segment an empty session")
    prompt = prompts.render("segmentation",
                            session_transcript=render_transcript(session),
                            format_instructions=PLAN_FORMAT_INSTRUCTIONS)
    last_error = ""
    raw = ""
    for attempt in range(1 + MAX_PLAN_RETRIES):
        attempt_prompt = prompt
        if last_error:
            attempt_prompt += ("\n\nYour previous reply was invalid: "
                               f"{last_error}. Reply again, JSON only.")
        raw = llm.complete(attempt_prompt).text
        try:
            plan = _parse_plan_reply(raw)
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            last_error = f"unparseable plan ({exc})"
            logger.warning("segmentation attempt %d: %s", attempt + 1, last_error)
            continue
        violations = validate_plan(session, plan)
        if not violations:
            return plan
        last_error = "; ".join(violations)
        logger.warning("segmentation attempt %d: %s", attempt + 1, last_error)
    raise SegmentationFailedError(
        f"no valid plan after {1 + MAX_PLAN_RETRIES} attempts: {last_error}",
        raw_reply=raw, attempts=1 + MAX_PLAN_RETRIES)


def apply_segment_plan(session: Session, plan: SegmentPlan) -> list[Segment]:
    """Materialize segments; pure function of (session, plan)."""
    violations = validate_plan(session, plan)
    if violations:
        raise PlanInvalidError("; ".join(violations))
    segments: list[Segment] = []
    for topic in plan.topics:
        if not topic.spans:
            continue
        parts: list[str] = []
        for i, (start, end) in enumerate(topic.spans):
            if i > 0:
                parts.append(SEGMENT_GAP_MARKER)
            for m in session.messages[start:end + 1]:
                parts.append(f"{m.role}: {m.content}")
        segments.append(Segment(topic=topic.label, text="\n".join(parts),
                                source_spans=topic.spans, session_id=session.id))
    return segments
