"""Tolerant parsing of LLM JSON replies.

Only two defects are repaired: code-fence wrappers and trailing commas.
Anything else fails loudly; silent guessing corrupts memory.
"""

from __future__ import annotations

import json
import re
from typing import Any

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n(.*)\n?```\s*$", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def strip_code_fence(text: str) -> str:
    m = _FENCE_RE.match(text.strip())
    return m.group(1) if m else text


def loads_lenient(text: str) -> Any:
    """json.loads after fence stripping and trailing-comma removal."""
    cleaned = strip_code_fence(text).strip()
    cleaned = _TRAILING_COMMA_RE.sub(r"\1", cleaned)
    return json.loads(cleaned)
