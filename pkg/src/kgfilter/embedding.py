"""Embedding providers and cosine similarity.

Real encoders live outside this package. A provider is anything that maps a
string to a fixed-length float vector; three are shipped:

* :class:`HashEmbeddingProvider` - feature-hashed token counts, offline and
  deterministic, used by tests and benchmarks.
* :class:`PrecomputedEmbeddingProvider` - a JSONL table of ``{"key", "vector"}``
  rows produced by an external encoder.
* :class:`RemoteEmbeddingProvider` - a client for ``POST /embed``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmbeddingError, SimilarityError, TransportError, UnknownKeyError

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "KGFILTER_EMBED_ENDPOINT"


class EmbeddingProvider(ABC):
    """Maps text to a float64 vector of length :attr:`dim`."""

    kind: str = "abstract"
    #: False means callers must serialize access to :meth:`embed`.
    concurrency_safe: bool = True

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @abstractmethod
    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


def _check_text(text: str) -> None:
    if not isinstance(text, str) or not text:
        raise EmbeddingError("cannot embed empty text")


def _as_vector(values, dim: int | None = None) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise EmbeddingError(f"embedding must be a non-empty 1-D vector, got shape {vec.shape}")
    if dim is not None and vec.size != dim:
        raise EmbeddingError(f"embedding has dim {vec.size}, expected {dim}")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("embedding contains NaN or Inf")
    return vec


# -- hash provider -------------------------------------------------------------

_TOKEN = re.compile(r"<[^<>\s]+>|\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


def _features(token: str) -> list[str]:
    """The token itself plus its boundary-marked character trigrams.

    Bracketed tokens like ``<mask>`` stay atomic.
    """
    if token.startswith("<"):
        return [token]
    padded = f"#{token}#"
    return [token] + ["\x01" + padded[i : i + 3] for i in range(len(padded) - 2)]


class HashEmbeddingProvider(EmbeddingProvider):
    """Signed feature hashing of word tokens and their character trigrams,
    L2-normalized.

    Tokens are case-folded ``\\w+`` runs plus angle-bracket tokens such as
    ``<mask>``. Text without any token is hashed as a single token so that
    no non-empty string maps to the zero vector.
    """

    kind = "deterministic-hash"

    def __init__(self, dim: int = 256, seed: int = 0) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self._dim = dim
        self.seed = seed
        self._salt = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self._dim

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=self._salt).digest()
        value = int.from_bytes(digest, "little")
        return (value >> 1) % self._dim, (1.0 if value & 1 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        _check_text(text)
        tokens = tokenize(text) or [text.strip() or text]
        vec = np.zeros(self._dim)
        for token in tokens:
            for feature in _features(token):
                index, sign = self._bucket(feature)
                vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # signed collisions cancelled out; fall back to the whole text
            index, sign = self._bucket("\x00" + text)
            vec[index] = sign
            norm = 1.0
        vec /= norm
        vec.setflags(write=False)
        self._cache[text] = vec
        return vec

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed}


# -- precomputed table ---------------------------------------------------------


class PrecomputedEmbeddingProvider(EmbeddingProvider):
    kind = "precomputed-file"

    def __init__(self, table: Mapping[str, Sequence[float]], source: str = "") -> None:
        if not table:
            raise EmbeddingError("precomputed embedding table is empty")
        vectors: dict[str, np.ndarray] = {}
        dim = None
        for key, values in table.items():
            vec = _as_vector(values, dim)
            dim = vec.size
            vec.setflags(write=False)
            vectors[key] = vec
        self._table = vectors
        self._dim = dim
        self.source = source

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike) -> "PrecomputedEmbeddingProvider":
        table: dict[str, list[float]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    key, vector = row["key"], row["vector"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise EmbeddingError(f"{path}:{lineno}: bad embedding row ({exc})") from None
                table[key] = vector
        return cls(table, source=os.fspath(path))

    def to_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, vec in self._table.items():
                fh.write(json.dumps({"key": key, "vector": vec.tolist()}) + "\n")

    @property
    def dim(self) -> int:
        return self._dim

    def __contains__(self, text: str) -> bool:
        return text in self._table

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise UnknownKeyError([text]) from None

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = [t for t in texts if t not in self._table]
        if missing:
            raise UnknownKeyError(missing)
        return [self._table[t] for t in texts]

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "source": self.source, "size": len(self._table)}


# -- remote service ------------------------------------------------------------


class RemoteEmbeddingProvider(EmbeddingProvider):
    """Client for a service answering ``POST /embed`` with ``{"texts": [...]}``.

    Requests are chunked into ``batch_size`` texts; the response vectors must
    come back in request order.
    """

    kind = "remote-service"

    def __init__(
        self,
        endpoint: str | None = None,
        dim: int | None = None,
        batch_size: int = 64,
        timeout: float = 30.0,
    ) -> None:
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise EmbeddingError(f"no embedding endpoint given and ${ENDPOINT_ENV} is unset")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        endpoint = endpoint.rstrip("/")
        self.url = endpoint if endpoint.endswith("/embed") else endpoint + "/embed"
        self.batch_size = batch_size
        self.timeout = timeout
        self._dim = dim
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        if self._dim is None:
            self.embed_batch(["dimension probe"])
        return self._dim  # type: ignore[return-value]

    def _post(self, texts: list[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": texts}).encode("utf-8")
        request = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                status = resp.status
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"{self.url} answered HTTP {exc.code}", status=exc.code) from None
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"{self.url} unreachable: {exc}") from None
        if status != 200:
            raise TransportError(f"{self.url} answered HTTP {status}", status=status)
        try:
            vectors = json.loads(payload)["vectors"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise TransportError(f"{self.url} returned a malformed body") from None
        if len(vectors) != len(texts):
            raise TransportError(
                f"{self.url} returned {len(vectors)} vectors for {len(texts)} texts"
            )
        out = [_as_vector(v, self._dim) for v in vectors]
        with self._lock:
            if self._dim is None:
                self._dim = out[0].size
        for vec in out:
            if vec.size != self._dim:
                raise EmbeddingError(f"remote embedding has dim {vec.size}, expected {self._dim}")
        return out

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        for t in texts:
            _check_text(t)
        result: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            result.extend(self._post(list(texts[start : start + self.batch_size])))
        return result

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self._dim, "url": self.url, "batch_size": self.batch_size}


class MemoizedProvider(EmbeddingProvider):
    """Caches another provider's vectors by input text."""

    def __init__(self, inner: EmbeddingProvider) -> None:
        self.inner = inner
        self.kind = inner.kind
        self.concurrency_safe = inner.concurrency_safe
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.inner.dim

    def embed(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            vec = self._cache[text] = self.inner.embed(text)
        return vec

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        todo = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if todo:
            for text, vec in zip(todo, self.inner.embed_batch(todo)):
                self._cache[text] = vec
        return [self._cache[t] for t in texts]

    def describe(self) -> dict:
        return self.inner.describe()


def make_provider(
    kind: str,
    *,
    dim: int = 256,
    seed: int = 0,
    path: str | None = None,
    endpoint: str | None = None,
    batch_size: int = 64,
) -> EmbeddingProvider:
    """Build a provider from CLI/config style arguments."""
    if kind in ("hash", "deterministic-hash"):
        return HashEmbeddingProvider(dim=dim, seed=seed)
    if kind in ("precomputed", "precomputed-file"):
        if not path:
            raise EmbeddingError("precomputed provider needs an embeddings file")
        return PrecomputedEmbeddingProvider.from_jsonl(path)
    if kind in ("remote", "remote-service"):
        return RemoteEmbeddingProvider(endpoint, batch_size=batch_size)
    raise ValueError(f"unknown provider kind {kind!r}")


# -- similarity ----------------------------------------------------------------


def cosine(a, b) -> float:
    """Cosine similarity of two equal-length, non-zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise SimilarityError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(cosine_many(a, b[None, :])[0])


def cosine_many(query, matrix) -> np.ndarray:
    """Cosine of ``query`` against every row of ``matrix``.

    Each row is reduced on its own (no BLAS matrix product), so a row's score
    does not depend on which other rows share the batch.
    """
    q = np.asarray(query, dtype=np.float64)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or q.ndim != 1 or m.shape[1] != q.size:
        raise SimilarityError(f"dimension mismatch: {q.shape} vs {m.shape}")
    qn = math.sqrt(float((q * q).sum()))
    rn = np.sqrt((m * m).sum(axis=1))
    if qn == 0.0:
        raise SimilarityError("undefined similarity: zero vector")
    if np.any(rn == 0.0):
        raise SimilarityError(f"undefined similarity: zero vector at row {int(np.argmin(rn))}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = (m * q).sum(axis=1) / (rn * qn)
    if not np.all(np.isfinite(out)):
        raise SimilarityError("undefined similarity: non-finite input")
    return np.clip(out, -1.0, 1.0)


def stack(vectors: Iterable[np.ndarray], dim: int | None = None) -> np.ndarray:
    rows = list(vectors)
    if not rows:
        return np.zeros((0, dim or 0))
    return np.vstack(rows)
