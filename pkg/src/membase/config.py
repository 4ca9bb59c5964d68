"""Service configuration: JSON file + MEMBASE_* environment overrides.

Every config key has an override: top-level keys map to MEMBASE_<KEY>,
nested sections to MEMBASE_<SECTION>_<KEY> (e.g. MEMBASE_RECALL_W_TIME).
Values are parsed as JSON when possible, else taken as strings.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import DEFAULT_DIM, HashedBagEmbedder
from .engine import EngineConfig, MemoryEngine
from .errors import ConfigError
from .operators import CompressionConfig
from .prompts import DEFAULT_PROMPTS, TEMPLATE_NAMES, PromptLibrary
from .providers import HttpLLMConfig, HttpLLMProvider, MockLLMProvider
from .retrieval import RecallConfig
from .store import MemoryStore

ENV_PREFIX = "MEMBASE_"
SECTIONS = ("recall", "compression", "rerank")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    data_dir: str | None = None
    bearer_token: str | None = None
    provider: str = "mock"  # "mock" or "http-llm"
    mock_script: str | None = None
    llm_endpoint: str | None = None
    llm_api_key: str | None = None
    llm_model: str | None = None
    prompt_templates: dict = field(default_factory=dict)
    flush_threshold: int = 20
    dedup_threshold: float = 0.9
    llm_dedup: bool = False
    inline_consolidation: bool = True
    embedding_dim: int = DEFAULT_DIM
    recall: dict = field(default_factory=dict)
    compression: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provider not in ("mock", "http-llm"):
            raise ConfigError(f"unknown provider mode {self.provider!r}",
                              path="provider")
        if self.port < 1 or self.port > 65535:
            raise ConfigError("port out of range", path="port")
        for name in self.prompt_templates:
            if name not in TEMPLATE_NAMES:
                raise ConfigError(f"unknown prompt template {name!r}",
                                  path="prompt_templates")

    def recall_config(self) -> RecallConfig:
        return RecallConfig(**self.recall)

    def compression_config(self) -> CompressionConfig:
        return CompressionConfig(**self.compression)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(flush_threshold=self.flush_threshold,
                            dedup_threshold=self.dedup_threshold,
                            llm_dedup=self.llm_dedup,
                            inline_consolidation=self.inline_consolidation,
                            recall=self.recall_config(),
                            compression=self.compression_config())


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def apply_env_overrides(doc: dict, env: dict | None = None) -> dict:
    env = os.environ if env is None else env
    out = dict(doc)
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        value = _parse_env_value(raw)
        for section in SECTIONS:
            if rest.startswith(section + "_"):
                field_name = rest[len(section) + 1:]
                if section == "rerank":
                    recall = dict(out.get("recall", {}))
                    rerank = dict(recall.get("rerank", {}))
                    rerank[field_name] = value
                    recall["rerank"] = rerank
                    out["recall"] = recall
                else:
                    sub = dict(out.get(section, {}))
                    sub[field_name] = value
                    out[section] = sub
                break
        else:
            out[rest] = value
    return out


def load_config(path: str | None = None, *, env: dict | None = None) -> ServiceConfig:
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}",
                              path=str(path))
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object",
                              path=str(path))
    doc = apply_env_overrides(doc, env)
    known = set(ServiceConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ServiceConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc))


def build_provider(cfg: ServiceConfig):
    if cfg.provider == "mock":
        if not cfg.mock_script:
            raise ConfigError("mock provider mode requires mock_script",
                              path="mock_script")
        return MockLLMProvider.from_file(cfg.mock_script)
    if not cfg.llm_endpoint:
        raise ConfigError("http-llm provider requires llm_endpoint",
                          path="llm_endpoint")
    return HttpLLMProvider(HttpLLMConfig(endpoint=cfg.llm_endpoint,
                                         api_key=cfg.llm_api_key,
                                         model=cfg.llm_model or ""))


def build_engine(cfg: ServiceConfig) -> tuple[MemoryEngine, list[str]]:
    """Provider + store + prompts wired into a ready engine.

    Returns the engine and any store-recovery warnings.
    """
    warnings: list[str] = []
    if cfg.data_dir:
        data_dir = Path(cfg.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        store, warnings = MemoryStore.restore(data_dir, dim=cfg.embedding_dim)
    else:
        store = MemoryStore()
    llm = build_provider(cfg)
    prompts = (PromptLibrary(cfg.prompt_templates)
               if cfg.prompt_templates else DEFAULT_PROMPTS)
    embedder = HashedBagEmbedder(cfg.embedding_dim)
    engine = MemoryEngine(store, llm, embedder, config=cfg.engine_config(),
                          prompts=prompts)
    return engine, warnings
