"""Embedding providers and vector algebra.

Two providers share one interface: a deterministic local hashed embedding
(character trigrams feature-hashed with FNV-1a) for offline runs and tests,
and a client for a remote embedding service with an on-disk response cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np


class EmbedError(Exception):
    pass


class EmptyText(EmbedError):
    pass


class RemoteUnavailable(EmbedError):
    pass


class DimensionMismatch(EmbedError):
    pass


class ZeroVector(EmbedError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    norm: float

    @classmethod
    def of(cls, values: np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        return cls(values=arr, norm=float(np.linalg.norm(arr)))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


MIN_DIMENSION = 8


class EmbeddingProvider:
    """Common provider contract: ``embed_text`` maps text to a fixed-d vector."""

    kind = "abstract"

    def __init__(self, dimension: int):
        if dimension < MIN_DIMENSION:
            raise ValueError(f"dimension must be >= {MIN_DIMENSION}, got {dimension}")
        self.dimension = dimension

    @property
    def provider_id(self) -> str:
        return f"{self.kind}:{self.dimension}"

    def embed_text(self, text: str) -> EmbeddingVector:
        raise NotImplementedError


class LocalHashedProvider(EmbeddingProvider):
    """Character-trigram counts, FNV-1a feature-hashed, sign from hash parity.

    The text is trimmed, wrapped in ^/$ sentinels, and every trigram lands in
    bucket hash % d with sign +1 for even hashes and -1 for odd; the result is
    L2-normalized. Byte-identical across runs, platforms and thread counts.
    """

    kind = "local_hashed"

    def __init__(self, dimension: int = 256):
        super().__init__(dimension)

    def embed_text(self, text: str) -> EmbeddingVector:
        trimmed = text.strip()
        if not trimmed:
            raise EmptyText("cannot embed empty text")
        padded = "^" + trimmed + "$"
        vec = np.zeros(self.dimension, dtype=np.float64)
        for i in range(len(padded) - 2):
            h = fnv1a64(padded[i : i + 3].encode("utf-8"))
            sign = 1.0 if h % 2 == 0 else -1.0
            vec[h % self.dimension] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # only reachable with odd d and exact cancellation
            vec[fnv1a64(padded.encode("utf-8")) % self.dimension] = 1.0
            norm = 1.0
        return EmbeddingVector.of(vec / norm)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity, clamped to [-1, 1]."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"{a.dimension} vs {b.dimension}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    value = float(np.dot(a.values, b.values)) / (a.norm * b.norm)
    return max(-1.0, min(1.0, value))


Transport = Callable[[str, str, dict], dict]


def _requests_transport(endpoint: str, api_key: str, payload: dict) -> dict:
    import requests

    resp = requests.post(
        endpoint,
        json=payload,
        headers={"Authorization": f"Bearer {api_key}"},
        timeout=60,
    )
    resp.raise_for_status()
    return resp.json()


class RemoteProvider(EmbeddingProvider):
    """Client for a remote embedding service.

    Wire contract: request ``{"model": str, "input": [str]}`` answered by
    ``{"vectors": [[float, ...]]}``. Endpoint and key come from the
    EMBED_ENDPOINT / EMBED_API_KEY environment variables unless given
    explicitly. Responses are cached on disk keyed by (provider id, content
    hash); cache writes are serialized so concurrent embeds are safe.
    """

    kind = "remote"

    def __init__(
        self,
        model: str,
        dimension: int,
        endpoint: str | None = None,
        api_key: str | None = None,
        cache_dir: str | Path | None = None,
        transport: Transport | None = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(dimension)
        self.model = model
        self.endpoint = endpoint or os.environ.get("EMBED_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("EMBED_API_KEY", "")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.transport = transport or _requests_transport
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self._cache_lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return f"{self.kind}:{self.model}:{self.dimension}"

    def _cache_path(self, text: str) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256(f"{self.provider_id}\n{text}".encode("utf-8")).hexdigest()
        return self.cache_dir / f"{key}.json"

    def embed_text(self, text: str) -> EmbeddingVector:
        trimmed = text.strip()
        if not trimmed:
            raise EmptyText("cannot embed empty text")
        cache_path = self._cache_path(trimmed)
        if cache_path is not None and cache_path.exists():
            values = json.loads(cache_path.read_text())
            return EmbeddingVector.of(np.asarray(values, dtype=np.float64))

        payload = {"model": self.model, "input": [trimmed]}
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                response = self.transport(self.endpoint, self.api_key, payload)
                vectors = response["vectors"]
                values = np.asarray(vectors[0], dtype=np.float64)
                break
            except Exception as e:  # transport/shape errors are all retryable
                last_error = e
                if attempt + 1 < self.max_attempts:
                    self.sleep(self.backoff_base * (2**attempt))
        else:
            raise RemoteUnavailable(
                f"embedding service failed after {self.max_attempts} attempts"
            ) from last_error

        if values.shape != (self.dimension,):
            raise DimensionMismatch(
                f"service returned dimension {values.shape}, expected {self.dimension}"
            )
        if cache_path is not None:
            with self._cache_lock:
                cache_path.parent.mkdir(parents=True, exist_ok=True)
                tmp = cache_path.with_suffix(".tmp")
                tmp.write_text(json.dumps(values.tolist()))
                tmp.replace(cache_path)
        return EmbeddingVector.of(values)
