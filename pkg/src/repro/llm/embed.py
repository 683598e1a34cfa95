"""Text embedders and cosine helpers.

``HashEmbedder`` is a deterministic feature-hashing embedder that needs no
model and no network; it is what offline tests and fixture runs use.
``HTTPEmbedder`` talks to an OpenAI-compatible ``/embeddings`` endpoint and
is recorded/replayed through the gateway.
"""

from __future__ import annotations

import hashlib
import re
from typing import Sequence

import numpy as np

from ..errors import GatewayError, TransientError

_WORD_RE = re.compile(r"\w+", re.UNICODE)


class HashEmbedder:
    recordable = False

    def __init__(self, dim: int = 256) -> None:
        self.dim = dim
        self.model_id = f"hash-{dim}"

    def _features(self, text: str) -> list[tuple[str, float]]:
        feats: list[tuple[str, float]] = []
        for word in _WORD_RE.findall(text.lower()):
            feats.append(("w:" + word, 1.0))
            padded = f"#{word}#"
            feats.extend(("c:" + padded[i : i + 3], 0.5) for i in range(len(padded) - 2))
        return feats or [("<empty>", 1.0)]

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for feat, weight in self._features(text):
            h = int.from_bytes(hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest(), "little")
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[h % self.dim] += sign * weight
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in texts])


class HTTPEmbedder:
    """OpenAI-compatible embeddings client (e.g. a served all-MiniLM-L6-v2)."""

    recordable = True

    def __init__(self, base_url: str, api_key: str, model_id: str, *, dim: int = 384, timeout: float = 120.0, batch_size: int = 64) -> None:
        import httpx

        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers={"Authorization": f"Bearer {api_key}"}, timeout=timeout)
        self.model_id = model_id
        self.dim = dim
        self.batch_size = batch_size

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        import httpx

        out: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            chunk = list(texts[start : start + self.batch_size])
            try:
                resp = self._client.post("/embeddings", json={"model": self.model_id, "input": chunk})
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                raise TransientError(f"embedding transport error: {exc}") from exc
            if resp.status_code == 429 or resp.status_code >= 500:
                raise TransientError(f"embedding HTTP {resp.status_code}")
            if resp.status_code >= 400:
                raise GatewayError(f"embedding HTTP {resp.status_code}: {resp.text[:300]}")
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            out.extend(d["embedding"] for d in data)
        arr = np.asarray(out, dtype=float)
        if arr.ndim == 2 and arr.shape[1]:
            self.dim = arr.shape[1]
        return arr


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)
    return unit @ unit.T


def top_k(query: np.ndarray, matrix: np.ndarray, k: int) -> list[int]:
    """Row indices of the ``k`` most cosine-similar rows; ties go to the lower index."""
    if len(matrix) == 0:
        return []
    norms = np.linalg.norm(matrix, axis=1)
    qn = np.linalg.norm(query)
    sims = np.where(norms > 0, matrix @ query / np.where(norms > 0, norms, 1.0) / (qn or 1.0), 0.0)
    order = sorted(range(len(matrix)), key=lambda i: (-round(float(sims[i]), 12), i))
    return order[:k]
