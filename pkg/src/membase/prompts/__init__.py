"""Prompt template loading. Defaults ship in-package; paths overridable."""

from __future__ import annotations

from pathlib import Path

_PROMPT_DIR = Path(__file__).parent

TEMPLATE_NAMES = ("segmentation", "extraction", "merge", "compress", "dedup")


class PromptLibrary:
    """Holds the template texts; custom files override the defaults."""

    def __init__(self, overrides: dict[str, str] | None = None):
        self._templates: dict[str, str] = {}
        overrides = overrides or {}
        for name in TEMPLATE_NAMES:
            path = overrides.get(name)
            if path:
                self._templates[name] = Path(path).read_text(encoding="utf-8")
            else:
                self._templates[name] = (_PROMPT_DIR / f"{name}.txt").read_text(
                    encoding="utf-8")

    def render(self, name: str, **fields: str) -> str:
        template = self._templates[name]
        for key, value in fields.items():
            template = template.replace("{" + key + "}", value)
        return template


DEFAULT_PROMPTS = PromptLibrary()
