"""Shared synthetic data generators for the test suite."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from topikit.corpus import Corpus, Document

BASE_TS = datetime(2023, 9, 23, tzinfo=timezone.utc)


def make_blobs(
    centers: np.ndarray, per_blob: int, sigma: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    points = []
    labels = []
    for idx, center in enumerate(centers):
        points.append(center + sigma * rng.standard_normal((per_blob, len(center))))
        labels.extend([idx] * per_blob)
    return np.vstack(points), np.asarray(labels)


def planar_blobs(
    per_blob: int = 50, sigma: float = 0.1, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Two blobs with intrinsic 2-D structure embedded in R^10.

    Centers sit 10x the intra-blob spread apart. The low intrinsic dimension
    makes full neighborhood preservation possible in a 2-D layout, which is
    what the manifold-projection quality gate measures.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((10, 2)))
    offset = np.zeros(10)
    offset[0] = 10.0 * sigma * np.sqrt(2)
    points = []
    labels = []
    for b in range(2):
        local = sigma * rng.standard_normal((per_blob, 2))
        points.append(local @ basis.T + b * offset)
        labels.extend([b] * per_blob)
    return np.vstack(points), np.asarray(labels)


def group_vocab(n_groups: int, words_per_group: int = 14) -> list[list[str]]:
    return [
        [f"g{g}w{i:02d}" for i in range(words_per_group)] for g in range(n_groups)
    ]


def synthetic_posts(
    n_docs: int = 500, n_groups: int = 5, seed: int = 7
) -> tuple[list[dict], dict[str, int]]:
    """Vocabulary-disjoint template posts plus doc-id -> group truth."""
    rng = np.random.default_rng(seed)
    vocab = group_vocab(n_groups)
    records = []
    truth: dict[str, int] = {}
    for d in range(n_docs):
        g = d % n_groups
        n_words = int(rng.integers(7, 11))
        words = rng.choice(vocab[g], size=n_words, replace=False)
        doc_id = f"doc{d:04d}"
        records.append(
            {
                "id": doc_id,
                "text": " ".join(words),
                "ts": (BASE_TS + timedelta(minutes=d)).isoformat(),
                "likes": int(rng.integers(0, 500)),
                "retweets": int(rng.integers(0, 100)),
            }
        )
        truth[doc_id] = g
    return records, truth


def write_jsonl(records: list[dict], path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def corpus_from_texts(texts: list[str], clean: bool = True) -> Corpus:
    """Tiny corpus where clean_text equals the given text."""
    docs = tuple(
        Document(
            id=f"d{i}",
            raw_text=text,
            timestamp=BASE_TS + timedelta(seconds=i),
            clean_text=text if clean else "",
        )
        for i, text in enumerate(texts)
    )
    return Corpus(documents=docs, provenance="test")
