"""Text encoders, cosine similarity, the tag/candidate matching matrix, and exact top-k search.

Every similarity this module hands out is rounded to ``SCORE_DECIMALS``
places. Threshold decisions (fusion, uniformity, tagging) are made on
those rounded values, so the same pair of vectors gets the same verdict no
matter which code path or BLAS kernel produced the dot product.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .llm import HttpJsonClient, PermanentError

logger = logging.getLogger(__name__)

SCORE_DECIMALS = 12
DEFAULT_DIM = 256
CACHE_FORMAT = "tagsmith-embedding-cache"
CACHE_VERSION = 1

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class Encoder(Protocol):
    name: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...

    def encode_many(self, texts: Sequence[str]) -> np.ndarray: ...


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a."""
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 16)
def _trigram_slot(trigram: str, m: int) -> tuple[int, float]:
    h = fnv1a_64(trigram.encode("utf-8"))
    return h % m, (-1.0 if h >> 63 else 1.0)


def normalize_text(text: str) -> str:
    return unicodedata.normalize("NFC", text.lower())


def char_trigrams(text: str) -> list[str]:
    padded = f"#{normalize_text(text)}#"
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


def zero_vector(m: int) -> np.ndarray:
    return np.zeros(m, dtype=np.float64)


def is_zero(v: np.ndarray) -> bool:
    return not np.any(v)


def unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        return zero_vector(v.shape[0])
    return v / norm


def encode_deterministic(text: str, m: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature hashing of padded character trigrams, L2-normalized.

    Blank text maps to the zero vector. So does the (rare) string whose
    trigrams cancel out exactly.
    """
    if m < 16:
        raise ValueError("dimension must be >= 16")
    if not text.strip():
        return zero_vector(m)
    v = zero_vector(m)
    for tri in char_trigrams(text):
        bucket, sign = _trigram_slot(tri, m)
        v[bucket] += sign
    return unit(v)


class HashingEncoder:
    """Offline, reproducible encoder built on :func:`encode_deterministic`."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 16:
            raise ValueError("dimension must be >= 16")
        self.dim = dim
        self.name = f"hashing-fnv1a64-trigram-{dim}"

    def encode(self, text: str) -> np.ndarray:
        return encode_deterministic(text, self.dim)

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, t in enumerate(texts):
            out[i] = self.encode(t)
        return out


class RemoteEncoder:
    """OpenAI-compatible ``/embeddings`` client; vectors are normalized on arrival."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 api_key_env: str = "OPENAI_API_KEY", batch_size: int = 64, **http_kwargs):
        if api_key is None:
            api_key = os.environ.get(api_key_env)
        self.model = model
        self.name = f"remote:{model}"
        self.batch_size = batch_size
        self.dim = 0  # learned from the first response
        self.http = HttpJsonClient(base_url, api_key=api_key, **http_kwargs)

    def _fetch(self, texts: list[str]) -> list[np.ndarray]:
        body, _ = self.http.post("/embeddings", {"model": self.model, "input": texts})
        try:
            rows = sorted(body["data"], key=lambda d: d.get("index", 0))
            vecs = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise PermanentError("embedding response missing data[i].embedding") from exc
        if len(vecs) != len(texts):
            raise PermanentError(f"asked for {len(texts)} embeddings, got {len(vecs)}")
        return vecs

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        todo = [i for i, t in enumerate(texts) if t.strip()]
        vecs: dict[int, np.ndarray] = {}
        for start in range(0, len(todo), self.batch_size):
            idx = todo[start : start + self.batch_size]
            for i, v in zip(idx, self._fetch([texts[i] for i in idx])):
                vecs[i] = unit(v)
        if vecs and not self.dim:
            self.dim = next(iter(vecs.values())).shape[0]
        if not self.dim:
            raise PermanentError("embedding dimension unknown: no non-empty text encoded yet")
        out = np.zeros((len(texts), self.dim))
        for i, v in vecs.items():
            if v.shape[0] != self.dim:
                raise PermanentError(f"embedding dimension changed from {self.dim} to {v.shape[0]}")
            out[i] = v
        return out

    def encode(self, text: str) -> np.ndarray:
        return self.encode_many([text])[0]


class CachedEncoder:
    """Disk-backed memo of another encoder's vectors, keyed by (encoder name, text).

    File format: JSON lines. The first line is a header
    ``{"format": "tagsmith-embedding-cache", "version": 1, "encoder": name}``;
    every later line is ``{"key": sha256-hex, "vector": [floats]}``. The file
    is append-only and can be deleted at any time.
    """

    def __init__(self, inner: Encoder, path: str | Path):
        self.inner = inner
        self.name = inner.name
        self.path = Path(path)
        self._lock = threading.Lock()
        self._mem: dict[str, np.ndarray] = {}
        self._load()

    @property
    def dim(self) -> int:
        return self.inner.dim

    def key(self, text: str) -> str:
        return hashlib.sha256(f"{self.name}\0{text}".encode("utf-8")).hexdigest()

    def _load(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            header = fh.readline()
            try:
                meta = json.loads(header)
            except json.JSONDecodeError:
                meta = {}
            if meta.get("format") != CACHE_FORMAT or meta.get("version") != CACHE_VERSION:
                logger.warning("ignoring embedding cache %s: unknown format/version", self.path)
                return
            for line in fh:
                try:
                    entry = json.loads(line)
                    self._mem[entry["key"]] = np.asarray(entry["vector"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError):
                    logger.warning("skipping corrupt embedding cache line in %s", self.path)

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        keys = [self.key(t) for t in texts]
        with self._lock:
            missing = sorted({(k, t) for k, t in zip(keys, texts) if k not in self._mem})
        if missing:
            fresh = self.inner.encode_many([t for _, t in missing])
            with self._lock:
                new_file = not self.path.exists()
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    if new_file:
                        fh.write(json.dumps({"format": CACHE_FORMAT, "version": CACHE_VERSION,
                                             "encoder": self.name}) + "\n")
                    for (k, _), v in zip(missing, fresh):
                        if k not in self._mem:
                            self._mem[k] = v
                            fh.write(json.dumps({"key": k, "vector": v.tolist()}) + "\n")
        with self._lock:
            rows = [self._mem[k] for k in keys]
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    def encode(self, text: str) -> np.ndarray:
        return self.encode_many([text])[0]


@dataclass
class EmbeddingMatrix:
    """Row-aligned keys (tags or texts) and their vectors, shape (k, m)."""

    keys: list[str]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if len(self.keys) != self.vectors.shape[0]:
            raise ValueError(f"{len(self.keys)} keys for {self.vectors.shape[0]} rows")

    @classmethod
    def encode(cls, keys: Sequence[str], encoder: Encoder) -> "EmbeddingMatrix":
        keys = list(keys)
        if not keys:
            return cls([], np.zeros((0, encoder.dim)))
        return cls(keys, encoder.encode_many(keys))

    def __len__(self) -> int:
        return len(self.keys)


def _round(x):
    return np.round(x, SCORE_DECIMALS)


def cosine(v: np.ndarray, w: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either side is the zero vector."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise ValueError(f"dimension mismatch: {v.shape} vs {w.shape}")
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0.0 or nw == 0.0:
        return 0.0
    c = float(np.dot(v, w)) / (nv * nw)
    return float(_round(min(1.0, max(-1.0, c))))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def similarity_matrix(tags, cands) -> np.ndarray:
    """Matching score matrix S (N x n): S[i, j] = cos(tags[i], cands[j])."""
    a = tags.vectors if isinstance(tags, EmbeddingMatrix) else np.atleast_2d(np.asarray(tags, dtype=np.float64))
    b = cands.vectors if isinstance(cands, EmbeddingMatrix) else np.atleast_2d(np.asarray(cands, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    s = _unit_rows(a) @ _unit_rows(b).T
    return _round(np.clip(s, -1.0, 1.0))


def top_k(query: np.ndarray, tags: EmbeddingMatrix, k: int, floor: float = 0.0) -> list[tuple[str, float]]:
    """The ``k`` best rows with score >= ``floor``, ordered by (score desc, key asc)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(tags) == 0:
        return []
    scores = similarity_matrix(tags, np.asarray(query)[None, :])[:, 0]
    hits = [(key, float(s)) for key, s in zip(tags.keys, scores) if s >= floor]
    hits.sort(key=lambda kv: (-kv[1], kv[0]))
    return hits[:k]


def similar_pairs(vectors: np.ndarray, threshold: float, block: int = 1024) -> list[tuple[int, int]]:
    """All index pairs i < j with cosine >= threshold, scanning the upper triangle in row blocks."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    pairs: list[tuple[int, int]] = []
    for start in range(0, x.shape[0], block):
        s = similarity_matrix(x[start : start + block], x)
        rows, cols = np.nonzero(s >= threshold)
        rows = rows + start
        keep = cols > rows
        pairs.extend(zip(rows[keep].tolist(), cols[keep].tolist()))
    return pairs
