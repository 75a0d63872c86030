"""Frozen rationale embeddings: a deterministic mock encoder, a client for an
external sentence-embedding service, and an on-disk cache keyed by content.

Nothing in this module is trainable. The mock maps each token to a seeded
pseudo-random unit vector and L2-normalizes the bag sum, which makes texts
sharing tokens (class names, reasoning keywords) land near each other -- the
only property the guidance loss actually needs.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .encoder import tokenize_text
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    ExternalServiceError,
    RetryableTransportError,
)
from .hashing import child_rng

COMBINE_SEPARATOR = " | "


@dataclass(frozen=True)
class CotEmbedding:
    """A rationale vector and where it came from (mock, external, cache)."""

    vector: np.ndarray
    source: str

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed(self, text: str) -> CotEmbedding: ...


class MockEmbedder:
    """Hashed bag-of-tokens embedding with L2 normalization."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < 8:
            raise ConfigurationError("embedding dim must be >= 8")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"mock-bag-v1-s{seed}"
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is None:
            rng = child_rng("mock-token", self.seed, self.dim, token)
            vec = rng.standard_normal(self.dim)
            cached = vec / np.linalg.norm(vec)
            self._token_cache[token] = cached
        return cached

    def embed(self, text: str) -> CotEmbedding:
        tokens = tokenize_text(text)
        if not tokens:
            raise DegenerateInputError("cannot embed an empty rationale")
        total = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            total += self._token_vector(token)
        norm = np.linalg.norm(total)
        if norm < 1e-12:
            raise DegenerateInputError("token vectors cancelled to zero")
        return CotEmbedding(vector=total / norm, source="mock")


class EmbeddingCache:
    """Append-mostly vector store: a JSON index plus one blob per entry."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.index_path = self.directory / "index.json"
        if self.index_path.exists():
            self._index = json.loads(self.index_path.read_text(encoding="utf-8"))
        else:
            self._index = {}

    @staticmethod
    def key_for(provider_id: str, text: str, dim: int) -> str:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return f"{provider_id}:{digest}:{dim}"

    def get(self, key: str) -> np.ndarray | None:
        entry = self._index.get(key)
        if entry is None:
            return None
        blob = (self.directory / entry["file"]).read_bytes()
        return np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).copy()

    def put(self, key: str, vector: np.ndarray) -> None:
        name = hashlib.sha256(key.encode("utf-8")).hexdigest()[:32] + ".vec"
        dtype = np.dtype("<f8") if vector.dtype == np.float64 else np.dtype("<f4")
        (self.directory / name).write_bytes(np.ascontiguousarray(vector, dtype=dtype).tobytes())
        self._index[key] = {"file": name, "dim": int(vector.shape[0]), "dtype": dtype.str}
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self._index, indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(self.index_path)


EmbeddingTransport = Callable[[dict], dict]


def http_embedding_transport(endpoint: str, timeout: float = 30.0) -> EmbeddingTransport:
    def call(request: dict) -> dict:
        import os

        import requests

        headers = {}
        token = os.environ.get("RELDISTILL_API_KEY")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            reply = requests.post(endpoint, json=request, timeout=timeout,
                                  headers=headers)
        except requests.RequestException as exc:
            raise RetryableTransportError(f"request to {endpoint} failed: {exc}") from exc
        if reply.status_code != 200:
            raise RetryableTransportError(
                f"service at {endpoint} answered HTTP {reply.status_code}"
            )
        return reply.json()

    return call


class ExternalEmbedder:
    """Client for a sentence-embedding endpoint with content-hash caching.

    Inputs are truncated to ``max_tokens`` tokens before the call; replies
    must match the configured dimension. Cache hits are served without a
    network round trip and are bit-identical to the original vectors.
    """

    def __init__(
        self,
        endpoint: str | None,
        dim: int,
        max_tokens: int = 1024,
        transport: EmbeddingTransport | None = None,
        cache: EmbeddingCache | None = None,
        provider_id: str = "external-v1",
        max_retries: int = 2,
        retry_wait: float = 0.5,
    ):
        if transport is None:
            if not endpoint:
                raise ConfigurationError("external embedder needs an endpoint")
            transport = http_embedding_transport(endpoint)
        self.dim = dim
        self.max_tokens = max_tokens
        self.transport = transport
        self.cache = cache
        self.provider_id = provider_id
        self.max_retries = max_retries
        self.retry_wait = retry_wait

    def truncate(self, text: str) -> str:
        tokens = tokenize_text(text)
        if len(tokens) <= self.max_tokens:
            return text
        return " ".join(tokens[: self.max_tokens])

    def embed(self, text: str) -> CotEmbedding:
        if not text.strip():
            raise DegenerateInputError("cannot embed an empty rationale")
        payload = self.truncate(text)
        key = EmbeddingCache.key_for(self.provider_id, payload, self.dim)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return CotEmbedding(vector=hit, source="cache")
        reply = self._call({"text": payload})
        vector = np.asarray(reply.get("vector"), dtype=np.float64)
        if vector.ndim != 1:
            raise ExternalServiceError("service reply carries no flat 'vector' field")
        if vector.shape[0] != self.dim:
            raise ConfigurationError(
                f"service returned dimension {vector.shape[0]}, run expects {self.dim}"
            )
        if self.cache is not None:
            self.cache.put(key, vector)
        return CotEmbedding(vector=vector, source="external")

    def _call(self, request: dict) -> dict:
        last: Exception | None = None
        for retry in range(self.max_retries + 1):
            try:
                return self.transport(request)
            except RetryableTransportError as exc:
                last = exc
                if retry < self.max_retries:
                    time.sleep(self.retry_wait * (retry + 1))
        raise last  # type: ignore[misc]


def embed_combined(rationales: Sequence[str], provider: EmbeddingProvider) -> CotEmbedding:
    """Embed three rationales as one separator-joined text."""
    if len(rationales) != 3:
        raise DegenerateInputError("combined embedding expects exactly three rationales")
    if any(not r.strip() for r in rationales):
        raise DegenerateInputError("combined embedding needs non-empty rationales")
    return provider.embed(COMBINE_SEPARATOR.join(rationales))
