"""Embedded store: records, entities, keyword graph, queue, timelines.

Indexing is an exact scan at desk scale (the search contracts deliberately
allow an ANN swap later). Durability is an append-only operation log plus
binary snapshots; restore replays the log over the latest snapshot.
"""

from __future__ import annotations

import base64
import json
import logging
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import EmbeddingProvider, sparse_terms
from .errors import NotFoundError, StoreError
from .operators import QueueEntry, TopicTimeline, WindowSummary
from .schema import EntityInstance, MemorySchema, parse_schema, serialize_schema

logger = logging.getLogger("membase.store")

SNAPSHOT_MAGIC = b"MBS1"
SNAPSHOT_VERSION = 1
SNAPSHOT_FILE = "snapshot.mbs"
OPLOG_FILE = "oplog.jsonl"

DEFAULT_DIM = 256
TOKEN_CAP = 64
NODE_SIM_FLOOR = 0.1
HYBRID_ALPHA = 0.7
FETCH_MULTIPLIER = 4

RECORD_KINDS = ("event", "entity", "summary")


@dataclass
class MemoryRecord:
    id: str
    kind: str
    text: str
    dense: np.ndarray
    sparse: dict[str, float]
    tokens: np.ndarray | None = None  # (n, D), each row unit-norm
    metadata: dict = field(default_factory=dict)
    ttl_deadline: int | None = None

    @property
    def timestamp(self) -> int:
        return int(self.metadata.get("timestamp", 0))


@dataclass
class KeywordNode:
    keyword: str
    embedding: np.ndarray
    count: int
    linked_records: set[str] = field(default_factory=set)


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _unb64(s: str, rows: int | None = None) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(s), dtype="<f8").astype(np.float64)
    if rows is not None:
        a = a.reshape(rows, -1)
    return a


def record_to_dict(rec: MemoryRecord) -> dict:
    out = {"id": rec.id, "kind": rec.kind, "text": rec.text,
           "dense": _b64(rec.dense), "sparse": rec.sparse,
           "metadata": rec.metadata, "ttl_deadline": rec.ttl_deadline}
    if rec.tokens is not None and len(rec.tokens):
        out["tokens"] = _b64(rec.tokens)
        out["token_rows"] = int(rec.tokens.shape[0])
    return out


def record_from_dict(d: dict) -> MemoryRecord:
    tokens = None
    if "tokens" in d:
        tokens = _unb64(d["tokens"], d["token_rows"])
    return MemoryRecord(id=d["id"], kind=d["kind"], text=d["text"],
                        dense=_unb64(d["dense"]), sparse=dict(d["sparse"]),
                        tokens=tokens, metadata=dict(d["metadata"]),
                        ttl_deadline=d.get("ttl_deadline"))


def select_tokens(tokens: list[str], cap: int) -> list[str]:
    """Keep at most ``cap`` tokens, dropping the longest first (later
    duplicates go before earlier ones); survivors keep original order."""
    if len(tokens) <= cap:
        return list(tokens)
    order = sorted(range(len(tokens)),
                   key=lambda i: (len(tokens[i]), i), reverse=True)
    dropped = set(order[:len(tokens) - cap])
    return [t for i, t in enumerate(tokens) if i not in dropped]


def build_record(record_id: str, kind: str, text: str,
                 embedder: EmbeddingProvider, *, metadata: dict | None = None,
                 ttl_deadline: int | None = None, token_cap: int = TOKEN_CAP,
                 with_tokens: bool = True) -> MemoryRecord:
    """Assemble a MemoryRecord with dense, sparse and token features."""
    from .embedding import tokenize
    tokens = None
    if with_tokens:
        kept = select_tokens(tokenize(text), token_cap)
        if kept:
            tokens = embedder.embed_tokens(" ".join(kept))
    return MemoryRecord(id=record_id, kind=kind, text=text,
                        dense=embedder.embed_dense(text),
                        sparse=sparse_terms(text), tokens=tokens,
                        metadata=metadata or {}, ttl_deadline=ttl_deadline)


def entity_to_dict(e: EntityInstance) -> dict:
    return {"id": e.id, "entity_type": e.entity_type, "group_key": e.group_key,
            "properties": e.properties,
            "accumulators": {k: list(v) for k, v in e.accumulators.items()},
            "version": e.version, "updated_at": e.updated_at}


def entity_from_dict(d: dict) -> EntityInstance:
    return EntityInstance(id=d["id"], entity_type=d["entity_type"],
                          group_key=d["group_key"], properties=dict(d["properties"]),
                          accumulators={k: (float(v[0]), int(v[1]))
                                        for k, v in d["accumulators"].items()},
                          version=d["version"], updated_at=d["updated_at"])


def timeline_to_dict(t: TopicTimeline) -> dict:
    return {"topic": t.topic, "events": [[eid, ts] for eid, ts in t.events],
            "last_active": t.last_active,
            "summaries": [{"window_label": s.window_label, "text": s.text,
                           "created_at": s.created_at,
                           "event_ids": list(s.event_ids)} for s in t.summaries]}


def timeline_from_dict(d: dict) -> TopicTimeline:
    return TopicTimeline(
        topic=d["topic"], events=[(e[0], int(e[1])) for e in d["events"]],
        last_active=d["last_active"],
        summaries=[WindowSummary(window_label=s["window_label"], text=s["text"],
                                 created_at=s["created_at"],
                                 event_ids=tuple(s["event_ids"]))
                   for s in d["summaries"]])


def queue_entry_to_dict(q: QueueEntry) -> dict:
    return {"id": q.id, "kind": q.kind, "entity_type": q.entity_type,
            "group_key": q.group_key, "field": q.field, "items": q.items,
            "created_at": q.created_at, "attempts": q.attempts}


def queue_entry_from_dict(d: dict) -> QueueEntry:
    return QueueEntry(**d)


def _entry_crc(entry: dict) -> int:
    payload = json.dumps(entry, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return zlib.crc32(payload) & 0xFFFFFFFF


def _match_filter(rec: MemoryRecord, flt: dict | None) -> bool:
    if not flt:
        return True
    for key, value in flt.items():
        if key == "kind":
            if rec.kind != value:
                return False
        elif rec.metadata.get(key) != value:
            return False
    return True


def minmax_normalize(scores: list[float]) -> list[float]:
    """Min-max to [0,1]; a degenerate (all-equal) list maps to 1.0 when the
    shared score is positive, else 0.0."""
    if not scores:
        return []
    lo, hi = min(scores), max(scores)
    if hi > lo:
        return [(s - lo) / (hi - lo) for s in scores]
    return [1.0 if hi > 0 else 0.0 for s in scores]


class MemoryStore:
    """In-memory tables with an append-only log and snapshot files.

    Thread safety is a single re-entrant lock; readers copy what they
    need while holding it.
    """

    def __init__(self, data_dir: str | Path | None = None, *,
                 dim: int = DEFAULT_DIM, token_cap: int = TOKEN_CAP,
                 fsync: bool = False):
        self.dim = dim
        self.token_cap = token_cap
        self.fsync = fsync
        self.schema: MemorySchema | None = None
        self.records: dict[str, MemoryRecord] = {}
        self.entities: dict[tuple[str, str], EntityInstance] = {}
        self.nodes: dict[str, KeywordNode] = {}
        self.queue: list[QueueEntry] = []
        self.timelines: dict[str, TopicTimeline] = {}
        self.reinforced: dict[str, int] = {}
        self.flush_ids: set[str] = set()
        self._lock = threading.RLock()
        self._dense_cache: tuple[list[str], np.ndarray] | None = None
        self._log_fh = None
        self.data_dir = Path(data_dir) if data_dir else None
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._log_fh = open(self.data_dir / OPLOG_FILE, "ab")

    # ------------------------------------------------------------- log --

    def _log(self, op: str, **payload) -> None:
        if self._log_fh is None:
            return
        entry = {"op": op, **payload}
        entry["crc"] = _entry_crc(entry)
        line = json.dumps(entry, ensure_ascii=False) + "\n"
        self._log_fh.write(line.encode("utf-8"))
        self._log_fh.flush()
        if self.fsync:
            import os
            os.fsync(self._log_fh.fileno())

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    # ---------------------------------------------------------- schema --

    def install_schema(self, schema: MemorySchema) -> None:
        with self._lock:
            self.schema = schema
            self._log("schema", doc=serialize_schema(schema))

    # --------------------------------------------------------- records --

    def _validate_record(self, rec: MemoryRecord) -> None:
        if rec.kind not in RECORD_KINDS:
            raise StoreError(f"unknown record kind {rec.kind!r}")
        if rec.dense.shape != (self.dim,):
            raise StoreError(f"dense vector must have dim {self.dim}")
        norm = float(np.linalg.norm(rec.dense))
        if abs(norm - 1.0) > 1e-6:
            raise StoreError(f"dense vector norm {norm:.8f} is not unit")
        if rec.tokens is not None and len(rec.tokens):
            if rec.tokens.shape[0] > self.token_cap:
                raise StoreError(f"more than {self.token_cap} token vectors")
            tnorms = np.linalg.norm(rec.tokens, axis=1)
            if np.any(np.abs(tnorms - 1.0) > 1e-6):
                raise StoreError("token vectors must be unit-norm")
        if any(w <= 0 for w in rec.sparse.values()):
            raise StoreError("sparse weights must be positive")

    def upsert_record(self, rec: MemoryRecord) -> str:
        self._validate_record(rec)
        with self._lock:
            self.records[rec.id] = rec
            self._dense_cache = None
            for node in self.nodes.values():
                if rec.id in node.linked_records:
                    self._refresh_node(node)
            self._log("record", rec=record_to_dict(rec))
            return rec.id

    def get_record(self, record_id: str) -> MemoryRecord | None:
        with self._lock:
            return self.records.get(record_id)

    def delete_record(self, record_id: str) -> None:
        with self._lock:
            if record_id not in self.records:
                return
            del self.records[record_id]
            self._dense_cache = None
            for keyword in list(self.nodes):
                node = self.nodes[keyword]
                if record_id in node.linked_records:
                    node.linked_records.discard(record_id)
                    if node.linked_records:
                        self._refresh_node(node)
                    else:
                        del self.nodes[keyword]
            for timeline in self.timelines.values():
                timeline.events = [(eid, ts) for eid, ts in timeline.events
                                   if eid != record_id]
            self._log("del_record", id=record_id)

    def set_ttl(self, record_id: str, deadline: int | None) -> None:
        with self._lock:
            rec = self.records.get(record_id)
            if rec is None:
                raise NotFoundError(f"record {record_id!r} not found")
            rec.ttl_deadline = deadline
            self._log("ttl", id=record_id, deadline=deadline)

    # ---------------------------------------------------------- search --

    def _dense_matrix(self) -> tuple[list[str], np.ndarray]:
        if self._dense_cache is None:
            ids = sorted(self.records)
            if ids:
                mat = np.stack([self.records[i].dense for i in ids])
            else:
                mat = np.zeros((0, self.dim))
            self._dense_cache = (ids, mat)
        return self._dense_cache

    def dense_search(self, q: np.ndarray, k: int,
                     flt: dict | None = None) -> list[tuple[str, float]]:
        """Exact top-k by dot product of unit vectors."""
        if abs(float(np.linalg.norm(q)) - 1.0) > 1e-6:
            raise StoreError("query vector must be unit-norm")
        with self._lock:
            ids, mat = self._dense_matrix()
            if not ids:
                return []
            scores = mat @ q
            scored = [(rid, float(s)) for rid, s in zip(ids, scores)
                      if _match_filter(self.records[rid], flt)]
            scored.sort(key=lambda t: (-t[1], -self.records[t[0]].timestamp, t[0]))
            return scored[:k]

    def sparse_search(self, q_terms: dict[str, float], k: int,
                      flt: dict | None = None) -> list[tuple[str, float]]:
        """Dot product over shared terms; zero-overlap records excluded."""
        if any(w <= 0 for w in q_terms.values()):
            raise StoreError("query term weights must be positive")
        out: list[tuple[str, float]] = []
        with self._lock:
            for rec in self.records.values():
                if not _match_filter(rec, flt):
                    continue
                score = sum(w * rec.sparse.get(t, 0.0) for t, w in q_terms.items())
                if score > 0:
                    out.append((rec.id, score))
            out.sort(key=lambda t: (-t[1], -self.records[t[0]].timestamp, t[0]))
            return out[:k]

    def hybrid_search(self, query: str, k: int, embedder: EmbeddingProvider,
                      flt: dict | None = None,
                      alpha: float = HYBRID_ALPHA) -> list[tuple[str, float]]:
        """S_origin = alpha * dense + (1 - alpha) * sparse, both min-max
        normalized over k*4-deep fetches. Records with zero evidence on
        both paths are not candidates."""
        with self._lock:
            fetch = max(k, 1) * FETCH_MULTIPLIER
            dense = self.dense_search(embedder.embed_dense(query), fetch, flt)
            q_terms = sparse_terms(query)
            sparse = self.sparse_search(q_terms, fetch, flt) if q_terms else []
            dense_norm = dict(zip([i for i, _ in dense],
                                  minmax_normalize([s for _, s in dense])))
            sparse_norm = dict(zip([i for i, _ in sparse],
                                   minmax_normalize([s for _, s in sparse])))
            dense_raw = dict(dense)
            candidates = set(dense_norm) | set(sparse_norm)
            out = []
            for rid in candidates:
                if dense_raw.get(rid, 0.0) <= 0.0 and rid not in sparse_norm:
                    continue  # no lexical overlap and no semantic signal
                s = alpha * dense_norm.get(rid, 0.0) \
                    + (1 - alpha) * sparse_norm.get(rid, 0.0)
                out.append((rid, s))
            out.sort(key=lambda t: (-t[1], -self.records[t[0]].timestamp, t[0]))
            return out[:k]

    # --------------------------------------------------- keyword graph --

    def _refresh_node(self, node: KeywordNode) -> None:
        vecs = [self.records[rid].dense for rid in node.linked_records
                if rid in self.records]
        node.count = len(vecs)
        if not vecs:
            node.embedding = np.zeros(self.dim)
            return
        mean = np.mean(vecs, axis=0)
        norm = np.linalg.norm(mean)
        node.embedding = mean / norm if norm > 0 else mean

    def keyword_update(self, record_id: str, keywords: list[str]) -> None:
        with self._lock:
            if record_id not in self.records:
                raise NotFoundError(f"record {record_id!r} not stored")
            for raw in keywords:
                keyword = raw.strip().lower()
                if not keyword:
                    continue
                node = self.nodes.get(keyword)
                if node is None:
                    node = KeywordNode(keyword=keyword,
                                       embedding=np.zeros(self.dim), count=0)
                    self.nodes[keyword] = node
                node.linked_records.add(record_id)
                self._refresh_node(node)
                self._log("keyword", kw=keyword, record=record_id)

    def keyword_search(self, query: str, k: int, embedder: EmbeddingProvider,
                       floor: float = NODE_SIM_FLOOR) -> list[tuple[str, float]]:
        """Records linked under keyword nodes similar to the query; each
        record keeps its best node score."""
        qv = embedder.embed_dense(query)
        best: dict[str, float] = {}
        with self._lock:
            for node in self.nodes.values():
                sim = float(qv @ node.embedding)
                if sim <= floor:
                    continue
                for rid in node.linked_records:
                    if rid in self.records and sim > best.get(rid, -1.0):
                        best[rid] = sim
            out = list(best.items())
            out.sort(key=lambda t: (-t[1], -self.records[t[0]].timestamp, t[0]))
            return out[:k]

    # -------------------------------------------------------- entities --

    def get_entity(self, entity_type: str, group_key: str) -> EntityInstance | None:
        with self._lock:
            return self.entities.get((entity_type, group_key))

    def put_entity(self, entity: EntityInstance) -> None:
        with self._lock:
            self.entities[(entity.entity_type, entity.group_key)] = entity
            self._log("entity", ent=entity_to_dict(entity))

    # ----------------------------------------------------------- queue --

    def queue_push(self, entry: QueueEntry) -> None:
        with self._lock:
            self.queue.append(entry)
            self._log("queue_push", entry=queue_entry_to_dict(entry))

    def queue_pop(self) -> QueueEntry | None:
        with self._lock:
            if not self.queue:
                return None
            entry = self.queue.pop(0)
            self._log("queue_pop", id=entry.id)
            return entry

    def queue_depth(self) -> int:
        with self._lock:
            return len(self.queue)

    # ------------------------------------------------------- timelines --

    @staticmethod
    def timeline_key(entity_type: str, group_key: str, field_name: str) -> str:
        return f"{entity_type}/{group_key}/{field_name}"

    def timeline_append(self, entity_type: str, group_key: str, field_name: str,
                        event_id: str, ts: int) -> None:
        key = self.timeline_key(entity_type, group_key, field_name)
        with self._lock:
            timeline = self.timelines.get(key)
            if timeline is None:
                timeline = TopicTimeline(topic=key)
                self.timelines[key] = timeline
            timeline.events.append((event_id, ts))
            timeline.events.sort(key=lambda e: (e[1], e[0]))
            timeline.last_active = max(timeline.last_active, ts)
            self._log("timeline", key=key, tl=timeline_to_dict(timeline))

    def put_timeline(self, key: str, timeline: TopicTimeline) -> None:
        with self._lock:
            self.timelines[key] = timeline
            self._log("timeline", key=key, tl=timeline_to_dict(timeline))

    # --------------------------------------------------- reinforcement --

    def mark_reinforced(self, record_id: str, now: int) -> None:
        with self._lock:
            self.reinforced[record_id] = now
            rec = self.records.get(record_id)
            if rec is not None and rec.ttl_deadline is not None:
                rec.ttl_deadline = None
                self._log("ttl", id=record_id, deadline=None)
            self._log("reinforce", id=record_id, ts=now)

    # ---------------------------------------------------------- expiry --

    def expire(self, now: int) -> list[str]:
        """Prune records past TTL whose covering summary still exists and
        which were never reinforced."""
        pruned: list[str] = []
        with self._lock:
            for rid in list(self.records):
                rec = self.records[rid]
                if rec.ttl_deadline is None or rec.ttl_deadline >= now:
                    continue
                if rid in self.reinforced:
                    continue
                summary_id = rec.metadata.get("summary_id")
                if not summary_id or summary_id not in self.records:
                    continue  # safety: never drop without a live summary
                self.delete_record(rid)
                pruned.append(rid)
        return pruned

    # ---------------------------------------------------- idempotency --

    def seen_flush(self, flush_id: str) -> bool:
        with self._lock:
            return flush_id in self.flush_ids

    def record_flush(self, flush_id: str) -> None:
        with self._lock:
            self.flush_ids.add(flush_id)
            self._log("flush", id=flush_id)

    # ------------------------------------------------------ durability --

    def _sections(self) -> list[tuple[str, list[dict]]]:
        meta = {"schema": serialize_schema(self.schema) if self.schema else None,
                "flush_ids": sorted(self.flush_ids),
                "reinforced": self.reinforced}
        return [
            ("meta", [meta]),
            ("records", [record_to_dict(r) for _, r in sorted(self.records.items())]),
            ("entities", [entity_to_dict(e) for _, e in sorted(self.entities.items())]),
            ("keywords", [{"kw": n.keyword, "linked": sorted(n.linked_records)}
                          for _, n in sorted(self.nodes.items())]),
            ("queue", [queue_entry_to_dict(q) for q in self.queue]),
            ("timelines", [{"key": k, "tl": timeline_to_dict(t)}
                           for k, t in sorted(self.timelines.items())]),
        ]

    def snapshot(self) -> Path:
        """Write the snapshot file and start a fresh operation log."""
        if self.data_dir is None:
            raise StoreError("store has no data directory")
        with self._lock:
            path = self.data_dir / SNAPSHOT_FILE
            tmp = path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                fh.write(SNAPSHOT_MAGIC)
                fh.write(struct.pack("<I", SNAPSHOT_VERSION))
                sections = self._sections()
                fh.write(struct.pack("<I", len(sections)))
                for name, entries in sections:
                    nb = name.encode("utf-8")
                    fh.write(struct.pack("<I", len(nb)))
                    fh.write(nb)
                    fh.write(struct.pack("<I", len(entries)))
                    for entry in entries:
                        payload = json.dumps(entry, ensure_ascii=False).encode("utf-8")
                        fh.write(struct.pack("<I", len(payload)))
                        fh.write(payload)
            tmp.replace(path)
            if self._log_fh is not None:
                self._log_fh.close()
            self._log_fh = open(self.data_dir / OPLOG_FILE, "wb")
            self._log_fh.flush()
            return path

    def _load_snapshot(self, path: Path) -> None:
        data = path.read_bytes()
        off = 0

        def take(n: int) -> bytes:
            nonlocal off
            if off + n > len(data):
                raise StoreError(f"snapshot truncated at offset {off}", path=str(path))
            chunk = data[off:off + n]
            off += n
            return chunk

        if take(4) != SNAPSHOT_MAGIC:
            raise StoreError("bad snapshot header at offset 0", path=str(path))
        version = struct.unpack("<I", take(4))[0]
        if version != SNAPSHOT_VERSION:
            raise StoreError(f"unsupported snapshot version {version} at offset 4")
        n_sections = struct.unpack("<I", take(4))[0]
        for _ in range(n_sections):
            name_len = struct.unpack("<I", take(4))[0]
            name = take(name_len).decode("utf-8")
            count = struct.unpack("<I", take(4))[0]
            for _ in range(count):
                size = struct.unpack("<I", take(4))[0]
                at = off
                try:
                    entry = json.loads(take(size).decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise StoreError(f"corrupt snapshot entry at offset {at}: {exc}",
                                     path=str(path)) from exc
                self._apply_snapshot_entry(name, entry)

    def _apply_snapshot_entry(self, section: str, entry: dict) -> None:
        if section == "meta":
            if entry.get("schema"):
                self.schema = parse_schema(entry["schema"])
            self.flush_ids = set(entry.get("flush_ids", []))
            self.reinforced = {k: int(v) for k, v in entry.get("reinforced", {}).items()}
        elif section == "records":
            rec = record_from_dict(entry)
            self.records[rec.id] = rec
        elif section == "entities":
            ent = entity_from_dict(entry)
            self.entities[(ent.entity_type, ent.group_key)] = ent
        elif section == "keywords":
            node = KeywordNode(keyword=entry["kw"], embedding=np.zeros(self.dim),
                               count=0, linked_records=set(entry["linked"]))
            self.nodes[entry["kw"]] = node
        elif section == "queue":
            self.queue.append(queue_entry_from_dict(entry))
        elif section == "timelines":
            self.timelines[entry["key"]] = timeline_from_dict(entry["tl"])

    def _replay_log(self, path: Path) -> tuple[list[str], int]:
        """Apply complete entries; returns (warnings, last good byte offset)."""
        warnings: list[str] = []
        data = path.read_bytes()
        offset = 0
        applied = 0
        while offset < len(data):
            nl = data.find(b"\n", offset)
            line = data[offset:] if nl < 0 else data[offset:nl]
            if not line.strip():
                offset = len(data) if nl < 0 else nl + 1
                continue
            try:
                entry = json.loads(line.decode("utf-8"))
                crc = entry.pop("crc")
                if crc != _entry_crc(entry):
                    raise ValueError("checksum mismatch")
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                warnings.append(f"log truncated at byte {offset}: {exc}; "
                                f"recovered {applied} entries")
                logger.warning(warnings[-1])
                break
            self._apply_log_entry(entry)
            applied += 1
            offset = len(data) if nl < 0 else nl + 1
        return warnings, offset

    def _apply_log_entry(self, entry: dict) -> None:
        op = entry["op"]
        if op == "schema":
            self.schema = parse_schema(entry["doc"])
        elif op == "record":
            rec = record_from_dict(entry["rec"])
            self.records[rec.id] = rec
        elif op == "del_record":
            self.records.pop(entry["id"], None)
            for keyword in list(self.nodes):
                node = self.nodes[keyword]
                node.linked_records.discard(entry["id"])
                if not node.linked_records:
                    del self.nodes[keyword]
            for timeline in self.timelines.values():
                timeline.events = [(eid, ts) for eid, ts in timeline.events
                                   if eid != entry["id"]]
        elif op == "ttl":
            rec = self.records.get(entry["id"])
            if rec is not None:
                rec.ttl_deadline = entry["deadline"]
        elif op == "entity":
            ent = entity_from_dict(entry["ent"])
            self.entities[(ent.entity_type, ent.group_key)] = ent
        elif op == "keyword":
            node = self.nodes.get(entry["kw"])
            if node is None:
                node = KeywordNode(keyword=entry["kw"],
                                   embedding=np.zeros(self.dim), count=0)
                self.nodes[entry["kw"]] = node
            node.linked_records.add(entry["record"])
        elif op == "queue_push":
            self.queue.append(queue_entry_from_dict(entry["entry"]))
        elif op == "queue_pop":
            self.queue = [q for q in self.queue if q.id != entry["id"]]
        elif op == "timeline":
            self.timelines[entry["key"]] = timeline_from_dict(entry["tl"])
        elif op == "reinforce":
            self.reinforced[entry["id"]] = entry["ts"]
        elif op == "flush":
            self.flush_ids.add(entry["id"])
        else:
            raise StoreError(f"unknown log op {op!r}")

    @classmethod
    def restore(cls, data_dir: str | Path, *, dim: int = DEFAULT_DIM,
                token_cap: int = TOKEN_CAP,
                fsync: bool = False) -> tuple["MemoryStore", list[str]]:
        """Load snapshot (if any) and replay the log; returns (store, warnings).

        An empty directory restores to an empty store. A truncated log tail
        recovers up to the last complete entry with a warning; a corrupt
        snapshot is an error naming the byte offset.
        """
        data_dir = Path(data_dir)
        store = cls(None, dim=dim, token_cap=token_cap, fsync=fsync)
        warnings: list[str] = []
        snap = data_dir / SNAPSHOT_FILE
        if snap.exists():
            store._load_snapshot(snap)
        log = data_dir / OPLOG_FILE
        if log.exists():
            replay_warnings, good_offset = store._replay_log(log)
            warnings.extend(replay_warnings)
            if replay_warnings:
                # drop the unreadable tail so future appends stay readable
                with open(log, "r+b") as fh:
                    fh.truncate(good_offset)
        for node in store.nodes.values():
            store._refresh_node(node)
        store.data_dir = data_dir
        data_dir.mkdir(parents=True, exist_ok=True)
        store._log_fh = open(log, "ab")
        return store, warnings
