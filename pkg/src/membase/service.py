"""HTTP face of the engine.

Endpoints mirror the library one-to-one; any result reachable over HTTP
equals the equivalent library call. Errors come back as problem-detail
objects {code, message, path} with conventional status codes.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any

from fastapi import Depends, FastAPI, Query, Request
from fastapi.responses import JSONResponse

from . import __version__
from .config import ServiceConfig, build_engine
from .engine import FlushSummary, MemoryEngine
from .errors import (ConfigError, ConflictError, ConformanceError,
                     MembaseError, NotFoundError, PatchFormatError,
                     PatchRejectedError, PlanInvalidError, ProviderError,
                     SchemaSyntaxError, SchemaViolationError, StoreError)
from .retrieval import ScoredMemory
from .schema import EntityInstance, Violation

logger = logging.getLogger("membase.service")

_STATUS_BY_ERROR: tuple[tuple[type, int], ...] = (
    (NotFoundError, 404),
    (ConflictError, 409),
    (SchemaSyntaxError, 422),
    (SchemaViolationError, 422),
    (ConformanceError, 422),
    (PlanInvalidError, 422),
    (PatchFormatError, 422),
    (PatchRejectedError, 422),
    (ConfigError, 422),
    (ProviderError, 502),
    (StoreError, 500),
)


def problem_detail(exc: MembaseError) -> dict:
    body: dict[str, Any] = {"code": exc.code, "message": exc.message,
                            "path": exc.path}
    violations = getattr(exc, "violations", None)
    if violations:
        body["violations"] = [dataclasses.asdict(v) for v in violations]
    return body


def status_for(exc: MembaseError) -> int:
    for etype, status in _STATUS_BY_ERROR:
        if isinstance(exc, etype):
            return status
    return 500


def violation_dict(v: Violation) -> dict:
    return dataclasses.asdict(v)


def scored_memory_dict(sm: ScoredMemory) -> dict:
    return {"id": sm.record.id, "kind": sm.record.kind,
            "text": sm.record.text, "metadata": sm.record.metadata,
            "s_origin": sm.s_origin, "s_time": sm.s_time,
            "s_busi": sm.s_busi, "s_final": sm.s_final, "path": sm.path}


def entity_dict(ent: EntityInstance) -> dict:
    return {"id": ent.id, "entity_type": ent.entity_type,
            "group_key": ent.group_key, "properties": ent.properties,
            "version": ent.version, "updated_at": ent.updated_at}


def flush_summary_dict(s: FlushSummary) -> dict:
    return {"status": s.status, "flush_id": s.flush_id,
            "event_ids": s.event_ids,
            "patched_entities": s.patched_entities,
            "created_entities": s.created_entities,
            "updated_entities": s.updated_entities,
            "queued": s.queued, "warnings": s.warnings}


def create_app(engine: MemoryEngine, *,
               bearer_token: str | None = None) -> FastAPI:
    app = FastAPI(title="membase", version=__version__)
    app.state.engine = engine

    def auth(request: Request) -> None:
        if bearer_token is None or request.url.path == "/v1/healthz":
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {bearer_token}":
            raise PermissionError("missing or invalid bearer token")

    @app.exception_handler(MembaseError)
    def _membase_error(request: Request, exc: MembaseError) -> JSONResponse:
        return JSONResponse(status_code=status_for(exc),
                            content=problem_detail(exc))

    @app.exception_handler(PermissionError)
    def _auth_error(request: Request, exc: PermissionError) -> JSONResponse:
        return JSONResponse(status_code=401,
                            content={"code": "unauthorized",
                                     "message": str(exc), "path": None})

    @app.put("/v1/schemas", dependencies=[Depends(auth)])
    async def install_schema(request: Request) -> dict:
        body = (await request.body()).decode("utf-8")
        report = engine.install_schema(body)
        return {"version": engine.schema.version,
                "tenant": engine.schema.tenant,
                "report": [violation_dict(v) for v in report]}

    @app.post("/v1/sessions/{session_id}/messages",
              dependencies=[Depends(auth)])
    def append_message(session_id: str, body: dict) -> dict:
        for key in ("user", "role", "content"):
            if key not in body:
                raise ConformanceError(f"message body missing {key!r}",
                                       path=key)
        return engine.append_message(session_id, body["user"], body["role"],
                                     body["content"], body.get("timestamp"))

    @app.post("/v1/sessions/{session_id}/flush", dependencies=[Depends(auth)])
    def flush(session_id: str, body: dict | None = None) -> dict:
        now = (body or {}).get("now")
        return flush_summary_dict(engine.flush(session_id, now=now))

    @app.get("/v1/memories/search", dependencies=[Depends(auth)])
    def search(q: str = Query(...), k: int | None = None,
               w_time: float | None = None, w_busi: float | None = None,
               rerank: bool | None = None, now: int | None = None) -> dict:
        hits = engine.search(q, k=k, w_time=w_time, w_busi=w_busi,
                             rerank_enabled=rerank, now=now)
        return {"results": [scored_memory_dict(sm) for sm in hits]}

    @app.get("/v1/entities/{entity_type}/{group_key:path}",
             dependencies=[Depends(auth)])
    def get_entity(entity_type: str, group_key: str) -> dict:
        return entity_dict(engine.get_entity(entity_type, group_key))

    @app.post("/v1/admin/compress", dependencies=[Depends(auth)])
    def compress(body: dict | None = None) -> dict:
        return engine.compress(now=(body or {}).get("now"))

    @app.post("/v1/admin/expire", dependencies=[Depends(auth)])
    def expire(body: dict | None = None) -> dict:
        return {"pruned": engine.expire(now=(body or {}).get("now"))}

    @app.get("/v1/healthz")
    def healthz() -> dict:
        schema = engine.schema
        return {"status": "ok", "version": __version__,
                "records": len(engine.store.records),
                "queue_depth": engine.store.queue_depth(),
                "schema_tenant": schema.tenant if schema else None,
                "schema_version": schema.version if schema else None}

    return app


def create_app_from_config(cfg: ServiceConfig) -> FastAPI:
    engine, warnings = build_engine(cfg)
    for w in warnings:
        logger.warning("store recovery: %s", w)
    return create_app(engine, bearer_token=cfg.bearer_token)
