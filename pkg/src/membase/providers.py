"""LLM provider contracts: a scripted deterministic mock and an HTTP client.

Every completion reports token usage (tokens = whitespace-split words for
the mock), which the token-efficiency tests rely on.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.request
from dataclasses import dataclass, field
from typing import Protocol

from .errors import ProviderError

logger = logging.getLogger("membase.providers")


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class LLMReply:
    text: str
    usage: TokenUsage


class LLMProvider(Protocol):
    def complete(self, prompt: str, **params) -> LLMReply: ...


def count_tokens(text: str) -> int:
    """Mock token counting: whitespace-split word count."""
    return len(text.split())


@dataclass
class ScriptEntry:
    match: str  # substring looked up in the prompt
    reply: str


class MockLLMProvider:
    """Replays scripted replies; first entry whose match substring occurs wins.

    Keeps a call log and cumulative usage so tests can assert how many
    completions ran and what they cost.
    """

    def __init__(self, script: list[ScriptEntry] | list[dict] | None = None):
        self.script: list[ScriptEntry] = []
        for entry in script or []:
            if isinstance(entry, dict):
                entry = ScriptEntry(match=entry["match"], reply=entry["reply"])
            self.script.append(entry)
        self.calls: list[str] = []
        self.total_prompt_tokens = 0
        self.total_completion_tokens = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str) -> "MockLLMProvider":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, list):
            raise ProviderError("mock script must be a JSON list of {match, reply}")
        return cls(raw)

    def add(self, match: str, reply: str) -> None:
        self.script.append(ScriptEntry(match=match, reply=reply))

    def complete(self, prompt: str, **params) -> LLMReply:
        reply_text = None
        for entry in self.script:
            if entry.match in prompt:
                reply_text = entry.reply
                break
        if reply_text is None:
            raise ProviderError("no scripted reply matches the prompt")
        usage = TokenUsage(prompt_tokens=count_tokens(prompt),
                           completion_tokens=count_tokens(reply_text))
        with self._lock:
            self.calls.append(prompt)
            self.total_prompt_tokens += usage.prompt_tokens
            self.total_completion_tokens += usage.completion_tokens
        return LLMReply(text=reply_text, usage=usage)


class FailingLLMProvider:
    """Always raises; used to exercise failure contracts."""

    def __init__(self, message: str = "provider down"):
        self.message = message
        self.calls = 0

    def complete(self, prompt: str, **params) -> LLMReply:
        self.calls += 1
        raise ProviderError(self.message)


@dataclass
class HttpLLMConfig:
    endpoint: str
    model: str = "default"
    api_key: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 2


class HttpLLMProvider:
    """Minimal chat-completions client for real deployments.

    Speaks the common {model, messages} request shape and reads back
    choices[0].message.content plus usage.
    """

    def __init__(self, cfg: HttpLLMConfig):
        self.cfg = cfg

    def complete(self, prompt: str, **params) -> LLMReply:
        body = json.dumps({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            **params,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                req = urllib.request.Request(self.cfg.endpoint, data=body,
                                             headers=headers, method="POST")
                with urllib.request.urlopen(req, timeout=self.cfg.timeout_s) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                text = payload["choices"][0]["message"]["content"]
                usage = payload.get("usage", {})
                return LLMReply(text=text, usage=TokenUsage(
                    prompt_tokens=int(usage.get("prompt_tokens", count_tokens(prompt))),
                    completion_tokens=int(usage.get("completion_tokens", count_tokens(text)))))
            except Exception as exc:  # noqa: BLE001 - uniform retry surface
                last = exc
                logger.warning("llm call failed (attempt %d): %s", attempt + 1, exc)
        raise ProviderError(f"llm endpoint failed after retries: {last}")
