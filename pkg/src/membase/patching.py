"""Patch-based entity field updates without an extra LLM call.

A patch is a SEARCH/REPLACE block. The search text is located in the old
field value by minimum edit distance (the model may quote it imperfectly),
then the replace text is spliced over the best-matching span.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .errors import PatchFormatError, PatchRejectedError
from .schema import EntityInstance, EntityTypeDef

logger = logging.getLogger("membase.patching")

SEARCH_DELIM = "<<<< SEARCH"
SEP_DELIM = "===="
REPLACE_DELIM = ">>>> REPLACE"

# A best match farther than this fraction of the needle length is treated
# as a hallucinated quote and the patch is refused.
DEFAULT_REJECT_RATIO = 0.5


@dataclass(frozen=True)
class Patch:
    search: str
    replace: str


@dataclass(frozen=True)
class SpanMatch:
    start: int
    end: int  # exclusive
    distance: int


def parse_patch(block: str) -> Patch:
    """Parse one SEARCH/REPLACE block.

    Delimiters must each sit on their own line, exactly once, in order.
    CRLF input is accepted; search/replace text is returned with LF only.
    """
    text = block.replace("\r\n", "\n")
    lines = text.split("\n")
    marks: dict[str, list[int]] = {SEARCH_DELIM: [], SEP_DELIM: [], REPLACE_DELIM: []}
    for i, line in enumerate(lines):
        if line.strip() in marks:
            marks[line.strip()].append(i)
    for delim in (SEARCH_DELIM, SEP_DELIM, REPLACE_DELIM):
        found = marks[delim]
        if len(found) == 0:
            raise PatchFormatError(f"missing delimiter {delim!r}",
                                   path=f"line {len(lines)}")
        if len(found) > 1:
            raise PatchFormatError(f"duplicated delimiter {delim!r}",
                                   path=f"line {found[1]}")
    a, b, c = marks[SEARCH_DELIM][0], marks[SEP_DELIM][0], marks[REPLACE_DELIM][0]
    if not a < b < c:
        raise PatchFormatError("delimiters out of order", path=f"line {a}")
    search = "\n".join(lines[a + 1:b])
    rep = "\n".join(lines[b + 1:c])
    return Patch(search=search, replace=rep)


def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def _free_start_end_row(h: np.ndarray, s: np.ndarray) -> np.ndarray:
    """dist[j] = min over i ≤ j of Levenshtein(h[i:j], s), for every end j.

    Row DP over the needle; the in-row (insertion) dependency is resolved
    with a prefix-minimum over (value - index), which keeps every row a
    handful of vector ops.
    """
    n = len(h)
    idx = np.arange(n + 1, dtype=np.int32)
    row = np.zeros(n + 1, dtype=np.int32)  # empty needle matches anywhere, cost 0
    for p in range(1, len(s) + 1):
        cost = (h != s[p - 1]).astype(np.int32)
        g = np.empty(n + 1, dtype=np.int32)
        g[0] = p
        np.minimum(row[:-1] + cost, row[1:] + 1, out=g[1:])
        row = np.minimum.accumulate(g - idx) + idx
    return row


def _fixed_start_row(h: np.ndarray, s: np.ndarray) -> np.ndarray:
    """dist[t] = Levenshtein(h[:t], s) for every prefix length t."""
    n = len(h)
    idx = np.arange(n + 1, dtype=np.int32)
    row = idx.copy()  # empty needle vs prefix of length t costs t
    for p in range(1, len(s) + 1):
        cost = (h != s[p - 1]).astype(np.int32)
        g = np.empty(n + 1, dtype=np.int32)
        g[0] = p
        np.minimum(row[:-1] + cost, row[1:] + 1, out=g[1:])
        row = np.minimum.accumulate(g - idx) + idx
    return row


def best_approx_span(haystack: str, needle: str) -> SpanMatch:
    """Substring of ``haystack`` with minimum Levenshtein distance to ``needle``.

    Ties are broken by smaller distance, then smaller start, then smaller
    length. Runs in O(|haystack| * |needle|).
    """
    if not needle:
        raise PatchFormatError("needle must be non-empty")
    # verbatim occurrence: distance 0, leftmost, needle-length span
    pos = haystack.find(needle)
    if pos >= 0:
        return SpanMatch(start=pos, end=pos + len(needle), distance=0)
    h = _codes(haystack)
    s = _codes(needle)
    n, m = len(h), len(s)
    if n == 0:
        return SpanMatch(start=0, end=0, distance=m)

    end_row = _free_start_end_row(h, s)
    dmin = int(end_row.min())
    # minimum distance achievable from each start = reversed free-start DP
    start_row = _free_start_end_row(h[::-1], s[::-1])[::-1]
    start = int(np.argmax(start_row == dmin))  # first index hitting dmin
    # shortest span at that start
    tail = _fixed_start_row(h[start:], s)
    length = int(np.argmax(tail == dmin))
    return SpanMatch(start=start, end=start + length, distance=dmin)


def apply_patch(old: str, p: Patch, *, reject_ratio: float = DEFAULT_REJECT_RATIO,
                warnings: list[str] | None = None) -> str:
    """Apply one patch to a field value. Total: never raises.

    Empty search initializes an empty field and is a no-op on a non-empty
    one. A match whose distance exceeds ceil(reject_ratio * |search|) is
    treated as a hallucinated quote and skipped with a warning.
    """
    if p.search == "":
        return p.replace if old == "" else old
    span = best_approx_span(old, p.search)
    limit = math.ceil(reject_ratio * len(p.search))
    if span.distance > limit:
        msg = (f"patch rejected: best match distance {span.distance} exceeds "
               f"{limit} for search text of length {len(p.search)}")
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return old
    return old[:span.start] + p.replace + old[span.end:]


def apply_patches(entity: EntityInstance, patches: list[tuple[str, Patch]],
                  entity_def: EntityTypeDef, *, now: int,
                  reject_ratio: float = DEFAULT_REJECT_RATIO,
                  warnings: list[str] | None = None) -> EntityInstance:
    """Apply field patches atomically; version bumps once per call.

    ``patches`` is a list of (field, Patch) in reply order; the same field
    may appear more than once and is patched in that order. Any unknown or
    non-string field rejects the whole call and leaves the entity as-is.
    """
    defs = entity_def.property_map()
    for field_name, _ in patches:
        pd = defs.get(field_name)
        if pd is None:
            raise PatchRejectedError(f"unknown field {field_name!r} on entity "
                                     f"{entity_def.entity_type!r}")
        if pd.prop.prop_type != "string":
            raise PatchRejectedError(f"field {field_name!r} is not string-typed")
    props = dict(entity.properties)
    for field_name, patch in patches:
        old = str(props.get(field_name) or "")
        props[field_name] = apply_patch(old, patch, reject_ratio=reject_ratio,
                                        warnings=warnings)
    return dc_replace(entity, properties=props, version=entity.version + 1,
                      updated_at=now)
