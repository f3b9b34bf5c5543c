"""Document embedding providers and the on-disk embedding matrix format.

Providers:

* ``hash-test``: deterministic, offline; each token maps to a pseudo-random
  Gaussian vector keyed by (token, seed); a document embeds to the
  L2-normalized token sum. Meant for tests and dry runs.
* ``file``: a previously saved matrix, realigned to the corpus by doc id.
* ``http``: a JSON service exposing ``POST /embed`` (see the embed-shim
  service), batched with bounded retries.

File format (little-endian): 8-byte magic ``EMBMAT01``, u32 row count, u32
dimension, then per row a u32 length-prefixed UTF-8 doc id, then n*dim f32
values, then u32 CRC32 over everything after the magic. Round-trips are
bit-exact.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import Corpus

logger = logging.getLogger(__name__)

MAGIC = b"EMBMAT01"
DEFAULT_MODEL = "paraphrase-multilingual-MiniLM-L12-v2"
DEFAULT_DIM = 384
PROVIDER_KINDS = ("file", "http", "hash-test")
HTTP_RETRIES = 3


class EmbeddingError(Exception):
    """Provider failures and dimension mismatches."""


class CorruptFileError(EmbeddingError):
    """Embedding file failed magic, structure, or checksum validation."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x d float32 matrix with row-aligned document ids."""

    vectors: np.ndarray
    doc_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2:
            raise EmbeddingError(f"vectors must be 2-D, got shape {vec.shape}")
        if len(self.doc_ids) != vec.shape[0]:
            raise EmbeddingError(
                f"{len(self.doc_ids)} doc ids for {vec.shape[0]} rows"
            )
        if vec.size and not np.isfinite(vec).all():
            raise EmbeddingError("vectors contain non-finite entries")
        object.__setattr__(self, "vectors", vec)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def zero_rows(self) -> list[int]:
        """Indices of all-zero rows (e.g. empty-text documents)."""
        if self.n == 0:
            return []
        return np.flatnonzero(~self.vectors.any(axis=1)).tolist()


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    kind: str = "hash-test"
    location: str | None = None
    model_name: str = DEFAULT_MODEL
    batch_size: int = 64
    dim: int = DEFAULT_DIM
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in PROVIDER_KINDS:
            raise EmbeddingError(
                f"unknown provider kind {self.kind!r}; expected one of {PROVIDER_KINDS}"
            )
        if self.kind in ("file", "http") and not self.location:
            raise EmbeddingError(f"provider kind {self.kind!r} requires a location")
        if self.batch_size < 1:
            raise EmbeddingError("batch_size must be positive")
        if self.dim < 1:
            raise EmbeddingError("dim must be positive")


def _token_rng(token: str, seed: int) -> np.random.Generator:
    digest = hashlib.blake2b(
        token.encode("utf-8"),
        digest_size=8,
        key=(seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"),
    ).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))


def hash_embed(text: str, seed: int, dim: int) -> np.ndarray:
    """Deterministic test embedding: normalized sum of per-token random vectors.

    Empty text embeds to the zero vector (flagged by the caller via
    :meth:`EmbeddingMatrix.zero_rows`).
    """
    if dim < 2:
        raise EmbeddingError("dim must be >= 2")
    tokens = text.split()
    if not tokens:
        logger.warning("hash_embed called on empty text; returning zero vector")
        return np.zeros(dim, dtype=np.float32)
    acc = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        acc += _token_rng(token, seed).standard_normal(dim)
    norm = np.linalg.norm(acc)
    if norm == 0.0:
        return np.zeros(dim, dtype=np.float32)
    return (acc / norm).astype(np.float32)


def _embed_hash_test(texts: list[str], spec: EmbeddingProviderSpec) -> np.ndarray:
    rows = [hash_embed(t, spec.seed, spec.dim) for t in texts]
    return np.vstack(rows) if rows else np.zeros((0, spec.dim), dtype=np.float32)


def _embed_from_file(corpus: Corpus, spec: EmbeddingProviderSpec) -> np.ndarray:
    matrix = load_embeddings(spec.location)
    if matrix.dim != spec.dim:
        raise EmbeddingError(
            f"dimension mismatch: expected {spec.dim}, file has {matrix.dim}"
        )
    index = {doc_id: i for i, doc_id in enumerate(matrix.doc_ids)}
    rows = []
    for doc in corpus:
        if doc.id not in index:
            raise EmbeddingError(f"embedding file missing document id {doc.id!r}")
        rows.append(matrix.vectors[index[doc.id]])
    return np.vstack(rows) if rows else np.zeros((0, spec.dim), dtype=np.float32)


def _post_with_retries(url: str, payload: dict, retries: int = HTTP_RETRIES) -> dict:
    delay = 0.5
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = requests.post(url, json=payload, timeout=30)
            if resp.status_code >= 500:
                raise EmbeddingError(f"server error {resp.status_code}")
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, EmbeddingError) as exc:
            last_error = exc
            if attempt < retries:
                logger.warning(
                    "embed request failed (%s); retry %d/%d in %.1fs",
                    exc,
                    attempt + 1,
                    retries,
                    delay,
                )
                time.sleep(delay)
                delay *= 2
    raise EmbeddingError(f"embedding provider unreachable after {retries} retries: {last_error}")


def _embed_http(texts: list[str], spec: EmbeddingProviderSpec) -> np.ndarray:
    url = spec.location.rstrip("/") + "/embed"
    chunks: list[np.ndarray] = []
    for start in range(0, len(texts), spec.batch_size):
        batch = texts[start : start + spec.batch_size]
        body = _post_with_retries(url, {"texts": batch, "normalize": True})
        vectors = np.asarray(body["vectors"], dtype=np.float32)
        if vectors.shape != (len(batch), spec.dim):
            raise EmbeddingError(
                f"dimension mismatch: expected {len(batch)}x{spec.dim}, "
                f"provider returned {vectors.shape}"
            )
        chunks.append(vectors)
    if not chunks:
        return np.zeros((0, spec.dim), dtype=np.float32)
    return np.vstack(chunks)


def embed_corpus(
    corpus: Corpus,
    provider: EmbeddingProviderSpec,
    text_source: str = "clean",
) -> EmbeddingMatrix:
    """Embed every document, one row per document in corpus order."""
    texts = corpus.texts(text_source)
    if provider.kind == "hash-test":
        vectors = _embed_hash_test(texts, provider)
    elif provider.kind == "file":
        vectors = _embed_from_file(corpus, provider)
    elif provider.kind == "http":
        vectors = _embed_http(texts, provider)
    else:  # pragma: no cover - rejected at spec construction
        raise EmbeddingError(f"unknown provider kind {provider.kind!r}")
    if vectors.shape[1] != provider.dim:
        raise EmbeddingError(
            f"dimension mismatch: expected {provider.dim}, got {vectors.shape[1]}"
        )
    matrix = EmbeddingMatrix(vectors=vectors, doc_ids=tuple(corpus.doc_ids()))
    zeros = matrix.zero_rows()
    if zeros:
        logger.warning("%d documents embedded to the zero vector", len(zeros))
    return matrix


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    payload = bytearray()
    payload += struct.pack("<II", matrix.n, matrix.dim)
    for doc_id in matrix.doc_ids:
        encoded = doc_id.encode("utf-8")
        payload += struct.pack("<I", len(encoded))
        payload += encoded
    payload += np.ascontiguousarray(matrix.vectors, dtype="<f4").tobytes()
    checksum = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", checksum))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise EmbeddingError(f"cannot read embedding file {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptFileError(f"{path}: bad magic or truncated header")
    payload, checksum_bytes = blob[len(MAGIC) : -4], blob[-4:]
    (stored_crc,) = struct.unpack("<I", checksum_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CorruptFileError(f"{path}: checksum mismatch")
    offset = 0
    try:
        n, dim = struct.unpack_from("<II", payload, offset)
        offset += 8
        doc_ids = []
        for _ in range(n):
            (length,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            doc_ids.append(payload[offset : offset + length].decode("utf-8"))
            offset += length
        expected = n * dim * 4
        raw = payload[offset : offset + expected]
        if len(raw) != expected or offset + expected != len(payload):
            raise CorruptFileError(f"{path}: payload length inconsistent")
        vectors = np.frombuffer(raw, dtype="<f4").reshape(n, dim).copy()
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: malformed payload ({exc})") from exc
    return EmbeddingMatrix(vectors=vectors, doc_ids=tuple(doc_ids))
