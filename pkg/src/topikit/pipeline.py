"""Staged pipeline orchestration with cached intermediates.

Every stage writes its output under ``<out_dir>/cache`` so later stages (and
the per-stage CLI subcommands) can rerun without recomputing upstream work.
The run manifest records the effective config, the seed, provider
identifiers, per-stage document counts, and a sha256 checksum of every
artifact. It contains no wall-clock data: two runs with the same config and
seed produce byte-identical bundles in single-worker mode.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import labeling, topics
from .cluster import ClusterAssignment, cluster
from .config import PipelineConfig
from .corpus import (
    Corpus,
    CorpusError,
    Document,
    KeywordSet,
    filter_by_daterange,
    filter_by_keywords,
    ingest_corpus,
    preprocess,
)
from .embedding import EmbeddingMatrix, embed_corpus, load_embeddings, save_embeddings
from .report import ThemeMapping, aggregate_themes, emit_report
from .topics import TopicModel, build_topic_model, reassign_outliers

logger = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "preprocess",
    "embed",
    "fit",
    "represent",
    "label",
    "themes",
    "report",
)


class StageError(Exception):
    """A pipeline stage failed; upstream caches are left intact."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {message}")


@dataclass
class RunContext:
    config: PipelineConfig

    @property
    def out_dir(self) -> Path:
        return self.config.out_dir

    @property
    def cache_dir(self) -> Path:
        return self.out_dir / "cache"

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "run_manifest.json"

    def ensure_dirs(self) -> None:
        self.cache_dir.mkdir(parents=True, exist_ok=True)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_manifest(ctx: RunContext) -> dict:
    if ctx.manifest_path.exists():
        return json.loads(ctx.manifest_path.read_text(encoding="utf-8"))
    return {
        "config": ctx.config.manifest_view(),
        "seed": ctx.config.seed,
        "providers": {
            "embedding": ctx.config.raw["embedding"]["provider"],
            "embedding_model": ctx.config.raw["embedding"]["model_name"],
            "labeling": ctx.config.raw["labeling"]["provider"],
            "labeling_model": ctx.config.raw["labeling"]["model"],
        },
        "stages": {},
    }


def _save_manifest(ctx: RunContext, manifest: dict) -> None:
    ctx.manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _record_stage(
    ctx: RunContext, manifest: dict, stage: str, outputs: list[Path], counts: dict
) -> None:
    manifest["stages"][stage] = {
        "outputs": {p.name: _sha256(p) for p in outputs},
        "counts": counts,
    }
    _save_manifest(ctx, manifest)


def _corpus_to_cache(corpus: Corpus, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(
                json.dumps(
                    {
                        "id": doc.id,
                        "text": doc.raw_text,
                        "ts": doc.timestamp.isoformat(),
                        "likes": doc.likes,
                        "retweets": doc.retweets,
                        "lang": doc.lang_hint,
                        "clean": doc.clean_text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def _corpus_from_cache(path: Path, provenance: str) -> Corpus:
    from datetime import datetime

    docs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        docs.append(
            Document(
                id=obj["id"],
                raw_text=obj["text"],
                timestamp=datetime.fromisoformat(obj["ts"]),
                likes=obj["likes"],
                retweets=obj["retweets"],
                lang_hint=obj.get("lang"),
                clean_text=obj.get("clean", ""),
            )
        )
    return Corpus(documents=tuple(docs), provenance=provenance)


def _assignment_to_cache(
    assignment: ClusterAssignment, doc_ids: list[str], path: Path
) -> None:
    path.write_text(
        json.dumps(
            {
                "doc_ids": doc_ids,
                "labels": assignment.labels.tolist(),
                "strengths": assignment.strengths.tolist(),
                "n_clusters": assignment.n_clusters,
            }
        )
        + "\n",
        encoding="utf-8",
    )


def _assignment_from_cache(path: Path) -> tuple[ClusterAssignment, list[str]]:
    obj = json.loads(path.read_text(encoding="utf-8"))
    assignment = ClusterAssignment(
        labels=np.asarray(obj["labels"], dtype=np.int64),
        strengths=np.asarray(obj["strengths"], dtype=np.float64),
        n_clusters=obj["n_clusters"],
    )
    return assignment, obj["doc_ids"]


def stage_ingest(ctx: RunContext, manifest: dict) -> Corpus:
    corpus = ingest_corpus(ctx.config.corpus_path)
    path = ctx.cache_dir / "corpus.raw.jsonl"
    _corpus_to_cache(corpus, path)
    _record_stage(ctx, manifest, "ingest", [path], {"documents": len(corpus)})
    return corpus


def stage_preprocess(ctx: RunContext, manifest: dict) -> Corpus:
    raw_path = ctx.cache_dir / "corpus.raw.jsonl"
    if not raw_path.exists():
        stage_ingest(ctx, manifest)
    corpus = _corpus_from_cache(raw_path, str(ctx.config.corpus_path))
    counts = {"ingested": len(corpus)}

    date_range = ctx.config.date_range()
    if date_range is not None:
        corpus = filter_by_daterange(corpus, *date_range)
        counts["after_date_filter"] = len(corpus)
        if len(corpus) == 0:
            raise StageError("preprocess", "no documents after filtering")

    corpus = preprocess(corpus, ctx.config.cleaning_rules())
    counts["after_cleaning"] = len(corpus)

    if ctx.config.keywords_file is not None:
        keywords = KeywordSet.from_file(ctx.config.keywords_file)
        corpus = filter_by_keywords(corpus, keywords)
        counts["after_keyword_filter"] = len(corpus)

    if len(corpus) == 0:
        raise StageError("preprocess", "no documents after filtering")
    path = ctx.cache_dir / "corpus.clean.jsonl"
    _corpus_to_cache(corpus, path)
    _record_stage(ctx, manifest, "preprocess", [path], counts)
    return corpus


def _load_clean_corpus(ctx: RunContext, manifest: dict) -> Corpus:
    path = ctx.cache_dir / "corpus.clean.jsonl"
    if not path.exists():
        return stage_preprocess(ctx, manifest)
    return _corpus_from_cache(path, str(ctx.config.corpus_path))


def stage_embed(ctx: RunContext, manifest: dict) -> tuple[Corpus, EmbeddingMatrix]:
    corpus = _load_clean_corpus(ctx, manifest)
    provider = ctx.config.provider_spec()
    matrix = embed_corpus(corpus, provider, text_source=ctx.config.embed_on)

    zeros = set(matrix.zero_rows())
    dropped = len(zeros)
    if zeros:
        # Zero vectors carry no direction; keep the pipeline alive by
        # excluding those documents from every later stage.
        keep = [i for i in range(matrix.n) if i not in zeros]
        corpus = Corpus(
            documents=tuple(corpus.documents[i] for i in keep),
            provenance=corpus.provenance,
        )
        matrix = EmbeddingMatrix(
            vectors=matrix.vectors[keep], doc_ids=tuple(matrix.doc_ids[i] for i in keep)
        )
        clean_path = ctx.cache_dir / "corpus.clean.jsonl"
        _corpus_to_cache(corpus, clean_path)
        logger.warning("%d zero-vector documents excluded from clustering", dropped)

    path = ctx.cache_dir / "embeddings.bin"
    save_embeddings(matrix, path)
    _record_stage(
        ctx,
        manifest,
        "embed",
        [path],
        {"documents": matrix.n, "dim": matrix.dim, "zero_vectors_excluded": dropped},
    )
    return corpus, matrix


def _load_embeddings_cache(ctx: RunContext, manifest: dict) -> tuple[Corpus, EmbeddingMatrix]:
    path = ctx.cache_dir / "embeddings.bin"
    if not path.exists():
        return stage_embed(ctx, manifest)
    corpus = _load_clean_corpus(ctx, manifest)
    matrix = load_embeddings(path)
    if list(matrix.doc_ids) != corpus.doc_ids():
        logger.warning("embedding cache out of sync with corpus; re-embedding")
        return stage_embed(ctx, manifest)
    return corpus, matrix


def stage_fit(ctx: RunContext, manifest: dict) -> tuple[Corpus, ClusterAssignment]:
    from .reduce import reduce as reduce_fn

    corpus, matrix = _load_embeddings_cache(ctx, manifest)
    reduced = reduce_fn(matrix, ctx.config.reduce_config())
    reduced_path = ctx.cache_dir / "reduced.npy"
    np.save(reduced_path, reduced)

    assignment = cluster(reduced.astype(np.float64), ctx.config.density_params())
    assign_path = ctx.cache_dir / "assignment.json"
    _assignment_to_cache(assignment, corpus.doc_ids(), assign_path)
    _record_stage(
        ctx,
        manifest,
        "fit",
        [reduced_path, assign_path],
        {
            "documents": len(corpus),
            "n_clusters": assignment.n_clusters,
            "noise": assignment.noise_count(),
        },
    )
    return corpus, assignment


def _load_assignment(ctx: RunContext, manifest: dict) -> tuple[Corpus, ClusterAssignment]:
    path = ctx.cache_dir / "assignment.json"
    if not path.exists():
        return stage_fit(ctx, manifest)
    corpus = _load_clean_corpus(ctx, manifest)
    assignment, doc_ids = _assignment_from_cache(path)
    if doc_ids != corpus.doc_ids():
        logger.warning("assignment cache out of sync with corpus; refitting")
        return stage_fit(ctx, manifest)
    return corpus, assignment


def stage_represent(
    ctx: RunContext, manifest: dict
) -> tuple[Corpus, ClusterAssignment, TopicModel, topics.Vocabulary, np.ndarray]:
    corpus, assignment = _load_assignment(ctx, manifest)
    rep = ctx.config.raw["representation"]
    if assignment.n_clusters == 0:
        raise StageError("represent", "clustering produced no topics")
    model, vocab, W = build_topic_model(
        corpus,
        assignment,
        policy=ctx.config.vocab_policy(),
        n_terms=rep["n_terms"],
        nr_docs=rep["nr_docs"],
    )
    noise_before = assignment.noise_count()
    final = reassign_outliers(
        assignment,
        corpus,
        W,
        vocab,
        strategy=rep["reassign_strategy"],
        threshold=rep["reassign_threshold"],
        window=rep["window"],
        stride=rep["stride"],
    )
    model = model.with_counts(
        {tid: count for tid, count in final.counts().items() if tid >= 0}
    )
    topics.conservation_check(model, final)

    final_path = ctx.cache_dir / "assignment_final.json"
    _assignment_to_cache(final, corpus.doc_ids(), final_path)
    model_path = ctx.cache_dir / "representation.json"
    model_path.write_text(
        json.dumps(
            {
                "topics": [
                    {
                        "id": t.id,
                        "count": t.count,
                        "top_terms": list(t.top_terms),
                        "representative_doc_ids": list(t.representative_doc_ids),
                    }
                    for t in model.topics
                ],
                "vocabulary_size": len(vocab),
                "ctfidf_normalized": model.ctfidf_normalized,
            },
            ensure_ascii=False,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    _record_stage(
        ctx,
        manifest,
        "represent",
        [final_path, model_path],
        {
            "topics": assignment.n_clusters,
            "noise_before_reassign": noise_before,
            "noise_after_reassign": final.noise_count(),
            "vocabulary": len(vocab),
        },
    )
    return corpus, final, model, vocab, W


def stage_label(ctx: RunContext, manifest: dict):
    corpus, final, model, vocab, W = stage_represent(ctx, manifest)
    lab = ctx.config.raw["labeling"]
    if lab["provider"] == "stub":
        client = labeling.StubLabelClient()
    else:
        client = labeling.HttpChatClient(params=ctx.config.model_params())
    template = (
        labeling.load_template(ctx.config.resolve_path(lab["template_file"]))
        if lab["template_file"]
        else labeling.default_template()
    )
    docs_by_id = {doc.id: doc.clean_text for doc in corpus}
    labels = labeling.label_topics(
        model,
        docs_by_id,
        client,
        template=template,
        params=ctx.config.model_params(),
        concurrency=lab["concurrency"] if ctx.config.workers > 1 else 1,
    )
    model = model.with_labels(labels)
    path = ctx.cache_dir / "labels.json"
    path.write_text(
        json.dumps({str(k): v for k, v in sorted(labels.items())}, ensure_ascii=False, indent=2)
        + "\n",
        encoding="utf-8",
    )
    _record_stage(ctx, manifest, "label", [path], {"labeled": len(labels)})
    return corpus, final, model, vocab, W


def stage_report(ctx: RunContext, manifest: dict) -> dict[str, Path]:
    corpus, final, model, vocab, W = stage_label(ctx, manifest)

    if ctx.config.themes_file is not None:
        mapping = ThemeMapping.from_file(ctx.config.themes_file)
    else:
        mapping = ThemeMapping(themes=())
    summary = aggregate_themes(model, mapping)

    sizes = [t.count for t in sorted(model.topics, key=lambda t: t.id)]
    ordered_ids = [t.id for t in sorted(model.topics, key=lambda t: t.id)]
    points = topics.topic_map_coordinates(
        W[ordered_ids], sizes, seed=ctx.config.seed
    )
    map_points = [
        (ordered_ids[i], x, y, size) for (i, x, y, size) in points
    ]

    written = emit_report(model, summary, map_points, ctx.out_dir)
    _record_stage(
        ctx,
        manifest,
        "report",
        list(written.values()),
        {"themes": len(summary.entries), "total_documents": summary.total},
    )
    return written


def run_pipeline(config: PipelineConfig) -> dict[str, Path]:
    """Execute every stage in order and emit the report bundle."""
    ctx = RunContext(config=config)
    ctx.ensure_dirs()
    manifest = _load_manifest(ctx)
    current = "ingest"
    try:
        stage_ingest(ctx, manifest)
        current = "preprocess"
        stage_preprocess(ctx, manifest)
        current = "embed"
        stage_embed(ctx, manifest)
        current = "fit"
        stage_fit(ctx, manifest)
        current = "report"
        written = stage_report(ctx, manifest)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(current, str(exc)) from exc
    written["run_manifest.json"] = ctx.manifest_path
    return written


def run_single_stage(config: PipelineConfig, stage: str) -> None:
    """Run one named stage, reusing caches for everything upstream."""
    ctx = RunContext(config=config)
    ctx.ensure_dirs()
    manifest = _load_manifest(ctx)
    runners = {
        "ingest": stage_ingest,
        "preprocess": stage_preprocess,
        "embed": stage_embed,
        "fit": stage_fit,
        "represent": stage_represent,
        "label": stage_label,
        "themes": stage_report,
        "report": stage_report,
    }
    if stage not in runners:
        raise StageError(stage, f"unknown stage; expected one of {STAGES}")
    try:
        runners[stage](ctx, manifest)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc
