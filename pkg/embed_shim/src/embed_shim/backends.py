"""Embedding backends for the shim service.

``SentenceTransformerBackend`` wraps the multilingual paraphrase model
(384 dimensions) for live serving. ``HashBackend`` is a deterministic,
dependency-free stand-in used by the test suite and by deployments that only
need the wire contract.
"""

from __future__ import annotations

import hashlib
import threading

import numpy as np

DEFAULT_MODEL = "paraphrase-multilingual-MiniLM-L12-v2"
DEFAULT_DIM = 384


class BackendError(Exception):
    """Model could not be loaded or used."""


class HashBackend:
    """Deterministic per-token Gaussian hash embeddings, unit-norm rows."""

    model_name = "hash-test"
    dim = DEFAULT_DIM

    def encode(self, texts: list[str], normalize: bool) -> np.ndarray:
        rows = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            acc = np.zeros(self.dim, dtype=np.float64)
            for token in text.split():
                digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
                rng = np.random.Generator(
                    np.random.PCG64(int.from_bytes(digest, "little"))
                )
                acc += rng.standard_normal(self.dim)
            norm = np.linalg.norm(acc)
            if norm > 0 and normalize:
                acc /= norm
            rows[i] = acc.astype(np.float32)
        return rows


class SentenceTransformerBackend:
    """Lazy-loading wrapper around a sentence-transformers model.

    The underlying model is not guaranteed to be thread-safe, so encoding
    runs behind a lock; requests stay independent, they just serialize at
    the model call.
    """

    def __init__(self, model_name: str = DEFAULT_MODEL) -> None:
        self.model_name = model_name
        self._model = None
        self._lock = threading.Lock()

    def _load(self):
        if self._model is None:
            try:
                from sentence_transformers import SentenceTransformer

                self._model = SentenceTransformer(self.model_name)
            except Exception as exc:  # model download/load failures -> 503
                raise BackendError(f"cannot load model {self.model_name!r}: {exc}") from exc
        return self._model

    @property
    def dim(self) -> int:
        return int(self._load().get_sentence_embedding_dimension())

    def encode(self, texts: list[str], normalize: bool) -> np.ndarray:
        model = self._load()
        with self._lock:
            vectors = model.encode(
                texts, convert_to_numpy=True, normalize_embeddings=normalize
            )
        return np.asarray(vectors, dtype=np.float32)


def backend_from_name(name: str, model_name: str = DEFAULT_MODEL):
    if name == "hash":
        return HashBackend()
    if name == "real":
        return SentenceTransformerBackend(model_name)
    raise BackendError(f"unknown backend {name!r}; expected 'real' or 'hash'")
