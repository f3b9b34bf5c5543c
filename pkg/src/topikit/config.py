"""Pipeline configuration: a single JSON file, validated all at once.

Every key has a documented default; ``topikit config --print-defaults``
emits them as a valid starter config. Validation accumulates every problem
(unknown keys, bad types, out-of-range values, missing referenced files)
instead of stopping at the first.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .cluster import ClusterError, DensityParams
from .corpus import CleaningRules, default_stopword_lists, load_stopword_file
from .embedding import DEFAULT_DIM, DEFAULT_MODEL, EmbeddingProviderSpec
from .labeling import DEFAULT_MODEL_ID, ModelParams
from .reduce import LayoutParams, ReduceConfig
from .topics import REASSIGN_STRATEGIES, VocabPolicy


class ConfigError(Exception):
    """Carries the complete list of validation problems."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


DEFAULTS: dict[str, Any] = {
    "corpus": None,                 # path to the JSON-lines corpus (required)
    "date_start": None,             # ISO-8601 inclusive lower bound, or null
    "date_end": None,               # ISO-8601 inclusive upper bound, or null
    "keywords_file": None,          # one phrase per line; null disables filtering
    "cleaning": {
        "remove_urls": True,
        "remove_mentions": True,
        "remove_emoji": True,
        "remove_punctuation": True,
        "remove_stopwords": True,
        "lowercase": True,
        "keep_hashtag_word": True,
        "stopword_files": {},       # lang code -> file, merged over built-ins
        "embed_on": "clean",        # clean | raw: which text the embedder sees
    },
    "embedding": {
        "provider": "hash-test",    # hash-test | file | http
        "location": None,           # file path or service URL
        "model_name": DEFAULT_MODEL,
        "batch_size": 64,
        "dim": DEFAULT_DIM,
    },
    "reduce": {
        "n_neighbors": 15,
        "n_components": 5,
        "min_dist": 0.0,
        "spread": 1.0,
        "metric": "cosine",
        "epochs": None,             # null = 500 (n <= 10k) else 200
        "neg_samples": 5,
        "learning_rate": 1.0,
    },
    "cluster": {
        "min_cluster_size": 10,
        "min_samples": 10,
    },
    "representation": {
        "n_terms": 10,
        "nr_docs": 10,
        "max_doc_freq": 0.5,
        "extra_stopwords_file": None,
        "reassign_strategy": "ctfidf",   # ctfidf | distributions
        "reassign_threshold": 0.0,
        "window": 4,
        "stride": 1,
    },
    "labeling": {
        "provider": "stub",         # stub | http
        "model": DEFAULT_MODEL_ID,
        "temperature": 0.0,
        "max_tokens": 64,
        "template_file": None,      # null = packaged template
        "concurrency": 4,
    },
    "themes_file": None,            # JSON list of {name, topic_ids}
    "out_dir": "out",
    "seed": 0,
    "workers": 1,
}

KEY_DOCS: dict[str, str] = {
    "corpus": "path to the JSON-lines corpus file (required)",
    "date_start": "inclusive ISO-8601 start of the collection window",
    "date_end": "inclusive ISO-8601 end of the collection window",
    "keywords_file": "keyword phrases, one per line; documents must match one",
    "cleaning": "text cleaning switches and per-language stopword files",
    "embedding": "document embedding provider and its parameters",
    "reduce": "dimensionality-reduction parameters",
    "cluster": "density-clustering parameters",
    "representation": "topic representation and outlier reassignment",
    "labeling": "language-model labeling provider",
    "themes_file": "macro-theme mapping (JSON list of name/topic_ids)",
    "out_dir": "output directory for caches and report bundle",
    "seed": "global random seed recorded in the run manifest",
    "workers": "parallelism cap; 1 guarantees deterministic output",
}


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict[str, Any]
    base_dir: Path = field(default_factory=Path)

    def resolve_path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def corpus_path(self) -> Path:
        return self.resolve_path(self.raw["corpus"])

    @property
    def keywords_file(self) -> Path | None:
        return self.resolve_path(self.raw["keywords_file"])

    @property
    def themes_file(self) -> Path | None:
        return self.resolve_path(self.raw["themes_file"])

    @property
    def out_dir(self) -> Path:
        return self.resolve_path(self.raw["out_dir"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def embed_on(self) -> str:
        return self.raw["cleaning"]["embed_on"]

    def date_range(self) -> tuple[datetime, datetime] | None:
        start, end = self.raw["date_start"], self.raw["date_end"]
        if start is None and end is None:
            return None
        lo = _parse_dt(start) if start else datetime.min.replace(tzinfo=timezone.utc)
        hi = _parse_dt(end) if end else datetime.max.replace(tzinfo=timezone.utc)
        return lo, hi

    def cleaning_rules(self) -> CleaningRules:
        c = self.raw["cleaning"]
        lists = dict(default_stopword_lists())
        for lang, path in c["stopword_files"].items():
            lists[lang] = load_stopword_file(self.resolve_path(path))
        return CleaningRules(
            remove_urls=c["remove_urls"],
            remove_mentions=c["remove_mentions"],
            remove_emoji=c["remove_emoji"],
            remove_punctuation=c["remove_punctuation"],
            remove_stopwords=c["remove_stopwords"],
            lowercase=c["lowercase"],
            keep_hashtag_word=c["keep_hashtag_word"],
            stopword_lists=lists,
        )

    def provider_spec(self) -> EmbeddingProviderSpec:
        e = self.raw["embedding"]
        location = e["location"]
        if e["provider"] == "file" and location is not None:
            location = str(self.resolve_path(location))
        return EmbeddingProviderSpec(
            kind=e["provider"],
            location=location,
            model_name=e["model_name"],
            batch_size=e["batch_size"],
            dim=e["dim"],
            seed=self.seed,
        )

    def reduce_config(self) -> ReduceConfig:
        r = self.raw["reduce"]
        return ReduceConfig(
            n_neighbors=r["n_neighbors"],
            metric=r["metric"],
            layout=LayoutParams(
                n_components=r["n_components"],
                min_dist=r["min_dist"],
                spread=r["spread"],
                epochs=r["epochs"],
                seed=self.seed,
                neg_samples=r["neg_samples"],
                learning_rate=r["learning_rate"],
                workers=self.workers,
            ),
        )

    def density_params(self) -> DensityParams:
        c = self.raw["cluster"]
        return DensityParams(
            min_cluster_size=c["min_cluster_size"], min_samples=c["min_samples"]
        )

    def vocab_policy(self) -> VocabPolicy:
        r = self.raw["representation"]
        stopwords: frozenset[str] = frozenset()
        if r["extra_stopwords_file"]:
            stopwords = load_stopword_file(self.resolve_path(r["extra_stopwords_file"]))
        return VocabPolicy(stopwords=stopwords, max_doc_freq=r["max_doc_freq"])

    def model_params(self) -> ModelParams:
        l = self.raw["labeling"]
        return ModelParams(
            model=l["model"],
            temperature=l["temperature"],
            max_tokens=l["max_tokens"],
        )

    def manifest_view(self) -> dict[str, Any]:
        """Config as recorded in the run manifest."""
        return copy.deepcopy(self.raw)


def _parse_dt(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _merge_defaults(raw: dict, defaults: dict, prefix: str, errors: list[str]) -> dict:
    merged = {}
    for key, default in defaults.items():
        if key in raw:
            value = raw[key]
            if isinstance(default, dict) and isinstance(value, dict):
                merged[key] = _merge_defaults(value, default, f"{prefix}{key}.", errors)
            else:
                merged[key] = value
        else:
            merged[key] = copy.deepcopy(default)
    for key in raw:
        if key.startswith("_"):
            continue
        if key not in defaults:
            errors.append(f"unknown config key: {prefix}{key}")
    return merged


def _check_types(cfg: dict, errors: list[str]) -> None:
    def need(section: str, key: str, kinds, allow_none=False):
        value = cfg[section][key] if section else cfg[key]
        label = f"{section}.{key}" if section else key
        if value is None:
            if not allow_none:
                errors.append(f"{label} must not be null")
            return
        if not isinstance(value, kinds) or isinstance(value, bool) and kinds is int:
            errors.append(f"{label} has wrong type {type(value).__name__}")

    need("", "corpus", str)
    need("", "date_start", str, allow_none=True)
    need("", "date_end", str, allow_none=True)
    need("", "keywords_file", str, allow_none=True)
    need("", "themes_file", str, allow_none=True)
    need("", "out_dir", str)
    need("", "seed", int)
    need("", "workers", int)
    for key in (
        "remove_urls", "remove_mentions", "remove_emoji", "remove_punctuation",
        "remove_stopwords", "lowercase", "keep_hashtag_word",
    ):
        need("cleaning", key, bool)
    need("cleaning", "stopword_files", dict)
    need("cleaning", "embed_on", str)
    need("embedding", "provider", str)
    need("embedding", "location", str, allow_none=True)
    need("embedding", "model_name", str)
    need("embedding", "batch_size", int)
    need("embedding", "dim", int)
    need("reduce", "n_neighbors", int)
    need("reduce", "n_components", int)
    need("reduce", "min_dist", (int, float))
    need("reduce", "spread", (int, float))
    need("reduce", "metric", str)
    need("reduce", "epochs", int, allow_none=True)
    need("reduce", "neg_samples", int)
    need("reduce", "learning_rate", (int, float))
    need("cluster", "min_cluster_size", int)
    need("cluster", "min_samples", int)
    need("representation", "n_terms", int)
    need("representation", "nr_docs", int)
    need("representation", "max_doc_freq", (int, float))
    need("representation", "extra_stopwords_file", str, allow_none=True)
    need("representation", "reassign_strategy", str)
    need("representation", "reassign_threshold", (int, float))
    need("representation", "window", int)
    need("representation", "stride", int)
    need("labeling", "provider", str)
    need("labeling", "model", str)
    need("labeling", "temperature", (int, float))
    need("labeling", "max_tokens", int)
    need("labeling", "template_file", str, allow_none=True)
    need("labeling", "concurrency", int)


def _check_ranges(cfg: dict, errors: list[str]) -> None:
    def bad(condition: bool, message: str) -> None:
        if condition:
            errors.append(message)

    emb, red, clu = cfg["embedding"], cfg["reduce"], cfg["cluster"]
    rep, lab, cln = cfg["representation"], cfg["labeling"], cfg["cleaning"]
    bad(cln["embed_on"] not in ("clean", "raw"), "cleaning.embed_on must be clean|raw")
    bad(
        emb["provider"] not in ("hash-test", "file", "http"),
        "embedding.provider must be hash-test|file|http",
    )
    bad(
        emb["provider"] in ("file", "http") and not emb["location"],
        f"embedding.location is required for provider {emb['provider']!r}",
    )
    bad(isinstance(emb["batch_size"], int) and emb["batch_size"] < 1,
        "embedding.batch_size must be >= 1")
    bad(isinstance(emb["dim"], int) and emb["dim"] < 2, "embedding.dim must be >= 2")
    bad(isinstance(red["n_neighbors"], int) and red["n_neighbors"] < 2,
        "reduce.n_neighbors must be >= 2")
    bad(isinstance(red["n_components"], int) and red["n_components"] < 1,
        "reduce.n_components must be >= 1")
    bad(red["metric"] not in ("cosine", "euclidean"),
        "reduce.metric must be cosine|euclidean")
    bad(isinstance(red["min_dist"], (int, float)) and red["min_dist"] < 0,
        "reduce.min_dist must be >= 0")
    bad(isinstance(red["spread"], (int, float)) and red["spread"] <= 0,
        "reduce.spread must be > 0")
    bad(red["epochs"] is not None and red["epochs"] < 1, "reduce.epochs must be >= 1")
    bad(isinstance(red["neg_samples"], int) and red["neg_samples"] < 1,
        "reduce.neg_samples must be >= 1")
    bad(isinstance(red["learning_rate"], (int, float)) and red["learning_rate"] <= 0,
        "reduce.learning_rate must be > 0")
    bad(isinstance(clu["min_cluster_size"], int) and clu["min_cluster_size"] < 2,
        "cluster.min_cluster_size must be >= 2")
    bad(isinstance(clu["min_samples"], int) and clu["min_samples"] < 1,
        "cluster.min_samples must be >= 1")
    bad(isinstance(rep["n_terms"], int) and rep["n_terms"] < 1,
        "representation.n_terms must be >= 1")
    bad(isinstance(rep["nr_docs"], int) and rep["nr_docs"] < 1,
        "representation.nr_docs must be >= 1")
    bad(
        isinstance(rep["max_doc_freq"], (int, float))
        and not 0 < rep["max_doc_freq"] <= 1,
        "representation.max_doc_freq must be in (0, 1]",
    )
    bad(
        rep["reassign_strategy"] not in REASSIGN_STRATEGIES,
        f"representation.reassign_strategy must be one of {REASSIGN_STRATEGIES}",
    )
    bad(isinstance(rep["window"], int) and rep["window"] < 1,
        "representation.window must be >= 1")
    bad(isinstance(rep["stride"], int) and rep["stride"] < 1,
        "representation.stride must be >= 1")
    bad(lab["provider"] not in ("stub", "http"), "labeling.provider must be stub|http")
    bad(isinstance(lab["concurrency"], int) and lab["concurrency"] < 1,
        "labeling.concurrency must be >= 1")
    bad(isinstance(cfg["workers"], int) and cfg["workers"] < 1,
        "workers must be >= 1")

    for key in ("date_start", "date_end"):
        if isinstance(cfg[key], str):
            try:
                _parse_dt(cfg[key])
            except ValueError:
                errors.append(f"{key} is not a valid ISO-8601 timestamp")
    if isinstance(cfg["date_start"], str) and isinstance(cfg["date_end"], str):
        try:
            if _parse_dt(cfg["date_start"]) > _parse_dt(cfg["date_end"]):
                errors.append("date_start is after date_end")
        except ValueError:
            pass


def _check_files(cfg: dict, base: Path, errors: list[str]) -> None:
    def exists(label: str, value: str | None) -> None:
        if value is None:
            return
        path = Path(value)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            errors.append(f"{label} does not exist: {path}")

    exists("corpus", cfg["corpus"])
    exists("keywords_file", cfg["keywords_file"])
    exists("themes_file", cfg["themes_file"])
    exists("representation.extra_stopwords_file",
           cfg["representation"]["extra_stopwords_file"])
    exists("labeling.template_file", cfg["labeling"]["template_file"])
    if cfg["embedding"]["provider"] == "file":
        exists("embedding.location", cfg["embedding"]["location"])
    if isinstance(cfg["cleaning"]["stopword_files"], dict):
        for lang, path in cfg["cleaning"]["stopword_files"].items():
            exists(f"cleaning.stopword_files.{lang}", path)


def validate_raw(raw: dict, base_dir: Path) -> PipelineConfig:
    """Validate an in-memory config mapping, reporting every error at once."""
    errors: list[str] = []
    merged = _merge_defaults(raw, DEFAULTS, "", errors)
    _check_types(merged, errors)
    if not errors:
        _check_ranges(merged, errors)
        _check_files(merged, base_dir, errors)
    if errors:
        raise ConfigError(errors)
    config = PipelineConfig(raw=merged, base_dir=base_dir)
    try:
        config.density_params()
    except ClusterError as exc:  # pragma: no cover - caught by range checks
        raise ConfigError([str(exc)]) from exc
    return config


def validate_config(path: str | Path) -> PipelineConfig:
    """Load and validate a config file, reporting every error at once."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file is not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config file must hold a JSON object"])
    return validate_raw(raw, path.parent)


def print_defaults() -> str:
    """Valid starter config: defaults plus inline documentation keys."""
    doc = {"_doc": KEY_DOCS}
    doc.update(DEFAULTS)
    return json.dumps(doc, indent=2)
