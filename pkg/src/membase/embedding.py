"""Embedding provider contract and the deterministic test embedder."""

from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np

DEFAULT_DIM = 256

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation stripped."""
    return _TOKEN_RE.findall(text.lower())


class EmbeddingProvider(Protocol):
    dim: int

    def embed_dense(self, text: str) -> np.ndarray: ...

    def embed_tokens(self, text: str) -> np.ndarray: ...


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashedBagEmbedder:
    """Deterministic test embedder: hashed bag-of-words, L2-normalized.

    embed_dense is a pure, position-independent function of the token
    multiset. embed_tokens maps each token to a fixed pseudo-random unit
    vector (seeded from the token hash), one row per token.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self._token_cache: dict[str, np.ndarray] = {}

    def embed_dense(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        tokens = tokenize(text)
        if not tokens:
            v[_bucket("", self.dim)] = 1.0
            return v
        for tok in tokens:
            v[_bucket(tok, self.dim)] += 1.0
        return v / np.linalg.norm(v)

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        self._token_cache[token] = v
        return v

    def embed_tokens(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([self._token_vector(t) for t in tokens])


def sparse_terms(text: str) -> dict[str, float]:
    """Term-frequency weights over the normalized token stream (no IDF)."""
    out: dict[str, float] = {}
    for tok in tokenize(text):
        out[tok] = out.get(tok, 0.0) + 1.0
    return out
