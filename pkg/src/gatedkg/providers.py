"""Chat and embedding providers.

Two families live here: deterministic offline implementations (feature
hashing embedder) and a client for the common chat-completions /
embeddings JSON wire format, with retries and a concurrency cap.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import ProviderError

log = logging.getLogger(__name__)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_DIM = 256


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def hash_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature-hashing embedding, L2-normalized.

    Tokens are the whitespace-separated pieces of the case-folded text.
    The bucket is FNV-1a-64 of the token's UTF-8 bytes modulo ``dim``; the
    sign comes from the low bit of FNV-1a-64 over the reversed bytes.
    Empty text yields the zero vector, which :func:`cosine` treats as 0.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for token in text.casefold().split():
        data = token.encode("utf-8")
        bucket = fnv1a_64(data) % dim
        sign = -1.0 if fnv1a_64(data[::-1]) & 1 else 1.0
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class EmbeddingProvider(Protocol):
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        """Return an ``(len(texts), dim)`` array, row order matching input."""
        ...


class ChatProvider(Protocol):
    def chat(self, messages: Sequence[tuple[str, str]]) -> str: ...


class HashEmbedder:
    """Offline embedder; a pure function of its input."""

    remote = False

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        return hash_embed(text, self.dim)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = hash_embed(text, self.dim)
        return out


@dataclass
class ProviderConfig:
    endpoint_url: str
    model_name: str
    api_key_env_var: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    max_concurrency: int = 4
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> ProviderConfig:
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class RemoteClient:
    """HTTP client for chat-completions / embeddings compatible endpoints.

    Thread-safe. At most ``max_concurrency`` requests are in flight at once.
    ``retries`` counts retried attempts over the client's lifetime.
    """

    remote = True

    def __init__(self, config: ProviderConfig, transport: httpx.BaseTransport | None = None) -> None:
        self.config = config
        self._limiter = threading.BoundedSemaphore(config.max_concurrency)
        self._http = httpx.Client(timeout=config.timeout, transport=transport)
        self._lock = threading.Lock()
        self.retries = 0
        self.requests = 0
        self.dim: int | None = None

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> RemoteClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env_var) if self.config.api_key_env_var else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, route: str, body: dict) -> dict:
        url = self.config.endpoint_url.rstrip("/") + route
        last: ProviderError | None = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                with self._lock:
                    self.retries += 1
                delay = self.config.backoff_base * (2 ** (attempt - 1))
                if delay > 0:
                    time.sleep(delay)
            try:
                with self._limiter:
                    with self._lock:
                        self.requests += 1
                    resp = self._http.post(url, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                last = ProviderError("timeout", str(exc), attempts=attempt + 1)
                continue
            except httpx.TransportError as exc:
                last = ProviderError("transport", str(exc), attempts=attempt + 1)
                continue
            if resp.status_code in _RETRY_STATUSES:
                last = ProviderError("status", f"HTTP {resp.status_code}", status=resp.status_code,
                                     attempts=attempt + 1)
                log.debug("retryable status %s from %s", resp.status_code, url)
                continue
            if resp.status_code >= 400:
                raise ProviderError("status", f"HTTP {resp.status_code}: {resp.text[:200]}",
                                    status=resp.status_code, attempts=attempt + 1)
            try:
                return resp.json()
            except ValueError as exc:
                raise ProviderError("transport", f"invalid JSON body: {exc}", attempts=attempt + 1) from exc
        assert last is not None
        raise ProviderError("exhausted", f"gave up after {attempts} attempts ({last})",
                            status=last.status, attempts=attempts)

    def chat(self, messages: Sequence[tuple[str, str]] | Sequence[dict]) -> str:
        wire = [m if isinstance(m, dict) else {"role": m[0], "content": m[1]} for m in messages]
        body = {"model": self.config.model_name, "messages": wire,
                "temperature": self.config.temperature}
        data = self._post("/chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("transport", f"malformed chat response: {exc!r}") from exc

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim or 0), dtype=np.float64)
        data = self._post("/embeddings", {"model": self.config.model_name, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda d: d.get("index", 0))
            out = np.asarray([r["embedding"] for r in rows], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError("transport", f"malformed embedding response: {exc!r}") from exc
        if out.shape[0] != len(texts):
            raise ProviderError("transport", f"expected {len(texts)} embeddings, got {out.shape[0]}")
        if self.dim is None:
            self.dim = out.shape[1]
        elif out.shape[1] != self.dim:
            raise ProviderError("transport", f"embedding dim changed from {self.dim} to {out.shape[1]}")
        return out
