"""Multi-path recall with recency and business weighting, plus a batched
late-interaction reranker over per-token vectors.

Recall runs two ranked paths with separate quotas: the hybrid dense/sparse
path and the keyword-node path. Each candidate's retrieval score is fused
with a time-decay score and a per-record business weight before the paths
are merged. Reranking rescans the merged list with a sum-of-max token
similarity, optionally against a quantized form of the stored vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingProvider
from .errors import ConfigError, MembaseError
from .store import MemoryRecord, MemoryStore, minmax_normalize

DAY_MS = 86_400_000

DEFAULT_FRESHNESS_MS = DAY_MS
DEFAULT_HALF_LIFE_MS = 7 * DAY_MS
DEFAULT_MERGE_THRESHOLD = 0.95
# fetch deeper than the quota so fusion can promote older/weighted records
PATH_FETCH_MULTIPLIER = 4


@dataclass(frozen=True)
class RerankConfig:
    enabled: bool = True
    candidate_cap: int = 1000
    quantized: bool = False
    token_merge_threshold: float = DEFAULT_MERGE_THRESHOLD

    def __post_init__(self):
        if self.candidate_cap < 1:
            raise ConfigError("candidate_cap must be >= 1")
        if not -1.0 <= self.token_merge_threshold <= 1.0:
            raise ConfigError("token_merge_threshold must be a cosine in [-1, 1]")


@dataclass(frozen=True)
class RecallConfig:
    w_time: float = 0.2
    w_busi: float = 0.1
    freshness_window_ms: int = DEFAULT_FRESHNESS_MS
    decay_half_life_ms: int = DEFAULT_HALF_LIFE_MS
    type_weights: tuple = ()
    quota_primary: int = 8
    quota_keyword: int = 2
    final_k: int = 10
    rerank: RerankConfig = field(default_factory=RerankConfig)

    def __post_init__(self):
        if isinstance(self.type_weights, dict):
            object.__setattr__(self, "type_weights",
                               tuple(sorted(self.type_weights.items())))
        if isinstance(self.rerank, dict):
            object.__setattr__(self, "rerank", RerankConfig(**self.rerank))
        for name in ("w_time", "w_busi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]", path=name)
        if self.w_time + self.w_busi > 1.0:
            raise ConfigError("w_time + w_busi must not exceed 1")
        if self.freshness_window_ms < 0:
            raise ConfigError("freshness_window_ms must be >= 0")
        if self.decay_half_life_ms <= 0:
            raise ConfigError("decay_half_life_ms must be positive")
        if self.quota_primary < 0 or self.quota_keyword < 0:
            raise ConfigError("quotas must be >= 0")
        if self.final_k < 1:
            raise ConfigError("final_k must be >= 1")
        for etype, w in self.type_weights:
            if not 0.0 <= w <= 1.0:
                raise ConfigError(f"type weight for {etype} must be in [0, 1]")

    def type_weight(self, event_type: str | None) -> float | None:
        for etype, w in self.type_weights:
            if etype == event_type:
                return w
        return None


@dataclass(frozen=True)
class ScoredMemory:
    record: MemoryRecord
    s_origin: float
    s_time: float
    s_busi: float
    s_final: float
    path: str  # "primary" or "keyword"

    @property
    def id(self) -> str:
        return self.record.id


# smallest positive float; keeps ancient memories above exactly zero
TIME_SCORE_FLOOR = 5e-324


def time_score(age_ms: int, cfg: RecallConfig) -> float:
    """1.0 inside the freshness window, then base-2 exponential decay."""
    age = max(0, age_ms)
    if age <= cfg.freshness_window_ms:
        return 1.0
    excess = age - cfg.freshness_window_ms
    return max(2.0 ** (-excess / cfg.decay_half_life_ms), TIME_SCORE_FLOOR)


def business_score(record: MemoryRecord, cfg: RecallConfig) -> float:
    """Instance weight wins over the type weight; unlisted types get 0.5."""
    w = record.metadata.get("weight")
    if isinstance(w, (int, float)) and not isinstance(w, bool):
        return min(1.0, max(0.0, float(w)))
    tw = cfg.type_weight(record.metadata.get("event_type"))
    if tw is not None:
        return tw
    return 0.5


def fuse(s_origin: float, s_time: float, s_busi: float, cfg: RecallConfig) -> float:
    w_origin = 1.0 - cfg.w_time - cfg.w_busi
    return w_origin * s_origin + cfg.w_time * s_time + cfg.w_busi * s_busi


def _score_path(hits: list[tuple[str, float]], store: MemoryStore,
                cfg: RecallConfig, now: int, path: str) -> list[ScoredMemory]:
    out = []
    for rid, s_origin in hits:
        rec = store.get_record(rid)
        if rec is None:
            continue
        s_time = time_score(now - rec.timestamp, cfg)
        s_busi = business_score(rec, cfg)
        out.append(ScoredMemory(record=rec, s_origin=s_origin, s_time=s_time,
                                s_busi=s_busi,
                                s_final=fuse(s_origin, s_time, s_busi, cfg),
                                path=path))
    out.sort(key=lambda sm: (-sm.s_final, -sm.record.timestamp, sm.id))
    return out


def recall(query: str, cfg: RecallConfig, store: MemoryStore,
           embedder: EmbeddingProvider, *, now: int,
           flt: dict | None = None) -> list[ScoredMemory]:
    """Two quota-limited paths merged with duplicate collapse (max score wins)."""
    primary_hits = store.hybrid_search(
        query, cfg.quota_primary * PATH_FETCH_MULTIPLIER, embedder, flt)
    primary = _score_path(primary_hits, store, cfg, now, "primary")
    primary = primary[:cfg.quota_primary]

    kw_hits = store.keyword_search(
        query, cfg.quota_keyword * PATH_FETCH_MULTIPLIER, embedder)
    # node similarities are unbounded raw dot products; normalize within
    # the path so fusion sees comparable [0,1] inputs
    norms = minmax_normalize([s for _, s in kw_hits])
    kw_scored = _score_path(
        [(rid, s) for (rid, _), s in zip(kw_hits, norms)],
        store, cfg, now, "keyword")
    kw_scored = kw_scored[:cfg.quota_keyword]

    best: dict[str, ScoredMemory] = {}
    for sm in primary + kw_scored:
        prev = best.get(sm.id)
        if prev is None or sm.s_final > prev.s_final:
            best[sm.id] = sm
    merged = sorted(best.values(),
                    key=lambda sm: (-sm.s_final, -sm.record.timestamp, sm.id))
    return merged


def maxsim(q_tokens: np.ndarray, d_tokens: np.ndarray) -> float:
    """Sum over query tokens of the best dot product among doc tokens."""
    q = np.asarray(q_tokens, dtype=np.float64)
    d = np.asarray(d_tokens, dtype=np.float64)
    if q.size == 0 or d.size == 0:
        raise MembaseError("maxsim requires non-empty token lists")
    return float((q @ d.T).max(axis=1).sum())


def maxsim_many(q_tokens: np.ndarray, docs: list[np.ndarray]) -> np.ndarray:
    """Batched maxsim: one matrix product over all docs' stacked tokens."""
    if len(docs) == 0:
        return np.zeros(0)
    counts = np.array([d.shape[0] for d in docs])
    if (counts == 0).any():
        raise MembaseError("maxsim requires non-empty token lists")
    q = np.ascontiguousarray(q_tokens, dtype=np.float32)
    if q.size == 0:
        raise MembaseError("maxsim requires non-empty token lists")
    stacked = np.ascontiguousarray(np.vstack(docs), dtype=np.float32)
    starts = np.zeros(len(docs), dtype=np.intp)
    np.cumsum(counts[:-1], out=starts[1:])
    sims = q @ stacked.T                               # (Tq, total_tokens)
    per_token = np.maximum.reduceat(sims, starts, axis=1)
    return per_token.sum(axis=0, dtype=np.float64)


@dataclass(frozen=True)
class CompressedTokens:
    codes: np.ndarray   # int8, shape (n, dim)
    scales: np.ndarray  # float64, shape (n,)

    @property
    def n_tokens(self) -> int:
        return int(self.codes.shape[0])

    def decode(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.scales[:, None]


def merge_runs(tokens: np.ndarray, threshold: float) -> np.ndarray:
    """Collapse consecutive near-duplicate tokens.

    A token joins the current run when its cosine against the run's
    renormalized mean exceeds ``threshold``; each run is replaced by that
    mean. Unit-norm output.
    """
    toks = np.asarray(tokens, dtype=np.float64)
    if toks.shape[0] <= 1:
        return toks.copy()
    out: list[np.ndarray] = []
    acc = toks[0].copy()
    count = 1
    for row in toks[1:]:
        mean = acc / count
        nrm = np.linalg.norm(mean)
        rep = mean / nrm if nrm > 0 else mean
        if float(rep @ row) > threshold:
            acc += row
            count += 1
        else:
            out.append(rep)
            acc = row.copy()
            count = 1
    mean = acc / count
    nrm = np.linalg.norm(mean)
    out.append(mean / nrm if nrm > 0 else mean)
    return np.stack(out)


def quantize_tokens(tokens: np.ndarray) -> CompressedTokens:
    """Per-vector symmetric int8: scale = max|component| / 127."""
    toks = np.asarray(tokens, dtype=np.float64)
    if toks.size == 0:
        return CompressedTokens(codes=np.zeros((0, 0), dtype=np.int8),
                                scales=np.zeros(0))
    scales = np.abs(toks).max(axis=1) / 127.0
    safe = np.where(scales > 0, scales, 1.0)
    codes = np.round(toks / safe[:, None]).astype(np.int8)
    return CompressedTokens(codes=codes, scales=safe)


def compress_tokens(tokens: np.ndarray, cfg: RerankConfig) -> CompressedTokens:
    return quantize_tokens(merge_runs(tokens, cfg.token_merge_threshold))


def eps_bound(q_tokens: np.ndarray, scales: np.ndarray) -> float:
    """Worst-case |maxsim(decoded) - maxsim(original)| from quantization.

    Each decoded component is within scale/2 of the original, so one dot
    product errs by at most ||q_t||_1 * scale/2, a per-query-token max errs
    by at most the largest such term, and the final sum adds them up.
    """
    if len(scales) == 0:
        return 0.0
    q = np.asarray(q_tokens, dtype=np.float64)
    l1 = np.abs(q).sum(axis=1)
    return float(l1.sum() * (np.max(scales) / 2.0))


def rerank(q_tokens: np.ndarray, candidates: list[ScoredMemory],
           cfg: RecallConfig) -> list[ScoredMemory]:
    """Reorder by late-interaction score; records without token vectors
    keep their fused-score order below the rescored ones."""
    if not cfg.rerank.enabled:
        return candidates[:cfg.final_k]
    cands = candidates[:cfg.rerank.candidate_cap]
    with_tokens = [sm for sm in cands
                   if sm.record.tokens is not None and len(sm.record.tokens)]
    without = [sm for sm in cands
               if sm.record.tokens is None or not len(sm.record.tokens)]
    if with_tokens and len(q_tokens):
        docs = []
        for sm in with_tokens:
            toks = sm.record.tokens
            if cfg.rerank.quantized:
                toks = compress_tokens(toks, cfg.rerank).decode()
            docs.append(toks)
        scores = maxsim_many(q_tokens, docs)
        order = sorted(range(len(with_tokens)),
                       key=lambda i: (-scores[i], -with_tokens[i].s_final,
                                      with_tokens[i].id))
        with_tokens = [with_tokens[i] for i in order]
    without.sort(key=lambda sm: (-sm.s_final, -sm.record.timestamp, sm.id))
    return (with_tokens + without)[:cfg.final_k]
