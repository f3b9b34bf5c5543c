"""Corpus ingestion, cleaning, and filtering for short social-media posts.

Cleaning deliberately performs no stemming or lemmatization: downstream
contextual embeddings handle word-form variation, so tokens are kept as
written (modulo lowercasing). Hashtags lose their ``#`` but keep the word,
mentions are removed wholesale, and tokenization is a plain Unicode
whitespace split so contiguous non-Latin scripts stay single tokens.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

# Fraction of malformed input lines tolerated before ingestion aborts.
MALFORMED_LINE_TOLERANCE = 0.10


class CorpusError(Exception):
    """Raised for unreadable files, malformed records, or invariant breaches."""


_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
# "rt @user:" retweet markers are removed together with the mention itself.
_RT_MARKER_RE = re.compile(r"\brt\s+(?=@)", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_HASHTAG_RE = re.compile(r"#(\w+)")
_WS_RE = re.compile(r"\s+")

# Emoji and pictograph ranges removed by `remove_emoji`. Covers the emoji
# presentation blocks plus modifiers (skin tones, variation selectors, ZWJ,
# keycap combiner) that only occur inside emoji sequences.
_EMOJI_RANGES = (
    (0x1F1E6, 0x1F1FF),  # regional indicators (flags)
    (0x1F300, 0x1F5FF),  # misc symbols and pictographs
    (0x1F600, 0x1F64F),  # emoticons
    (0x1F680, 0x1F6FF),  # transport and map symbols
    (0x1F700, 0x1F77F),  # alchemical symbols
    (0x1F780, 0x1F8FF),  # geometric shapes extended, supplemental arrows-C
    (0x1F900, 0x1F9FF),  # supplemental symbols and pictographs
    (0x1FA00, 0x1FAFF),  # chess symbols, symbols and pictographs extended-A
    (0x2600, 0x26FF),    # misc symbols
    (0x2700, 0x27BF),    # dingbats
    (0x2B00, 0x2BFF),    # misc symbols and arrows (stars, etc.)
    (0xFE0E, 0xFE0F),    # variation selectors
    (0x1F3FB, 0x1F3FF),  # skin tone modifiers
)
_EMOJI_SINGLES = frozenset({0x200D, 0x20E3, 0x2122, 0x2139})


def _is_emoji_char(ch: str) -> bool:
    cp = ord(ch)
    if cp in _EMOJI_SINGLES:
        return True
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


def _strip_emoji(text: str) -> str:
    return "".join(ch for ch in text if not _is_emoji_char(ch))


def _strip_punctuation(text: str) -> str:
    # Remove punctuation (P*) and symbol (S*) characters. The connector "_"
    # is kept: tokens such as handles written with underscores survive
    # cleaning in practice and splitting them changes the vocabulary.
    out = []
    for ch in text:
        if ch == "_":
            out.append(ch)
            continue
        cat = unicodedata.category(ch)
        out.append(" " if cat[0] in ("P", "S") else ch)
    return "".join(out)


# A compact English stopword list for short-text pipelines. Extend or
# replace via CleaningRules.stopword_lists / per-language stopword files.
_EN_STOPWORDS = frozenset(
    """a about above after again against all am an and any are aren't as at be
    because been before being below between both but by can't cannot could
    couldn't did didn't do does doesn't doing don't down during each few for
    from further had hadn't has hasn't have haven't having he he'd he'll he's
    her here here's hers herself him himself his how how's i i'd i'll i'm
    i've if in into is isn't it it's its itself let's me more most mustn't my
    myself no nor not of off on once only or other ought our ours ourselves
    out over own same shan't she she'd she'll she's should shouldn't so some
    such than that that's the their theirs them themselves then there there's
    these they they'd they'll they're they've this those through to too under
    until up very was wasn't we we'd we'll we're we've were weren't what
    what's when when's where where's which while who who's whom why why's
    with won't would wouldn't you you'd you'll you're you've your yours
    yourself yourselves amp via""".split()
)


def default_stopword_lists() -> dict[str, frozenset[str]]:
    return {"en": _EN_STOPWORDS}


def load_stopword_file(path: str | Path) -> frozenset[str]:
    """Read one stopword per line, UTF-8, ignoring blanks."""
    words = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word:
            words.append(word)
    return frozenset(words)


@dataclass(frozen=True)
class CleaningRules:
    """Switches for the post-cleaning pipeline.

    There is intentionally no stemming or lemmatization option; word forms
    are preserved for the embedding model.
    """

    remove_urls: bool = True
    remove_mentions: bool = True
    remove_emoji: bool = True
    remove_punctuation: bool = True
    remove_stopwords: bool = True
    lowercase: bool = True
    keep_hashtag_word: bool = True
    stopword_lists: Mapping[str, frozenset[str]] = field(
        default_factory=default_stopword_lists
    )

    def stopwords_for(self, lang_hint: str | None) -> frozenset[str]:
        if lang_hint is not None and lang_hint in self.stopword_lists:
            return self.stopword_lists[lang_hint]
        union: set[str] = set()
        for words in self.stopword_lists.values():
            union |= words
        return frozenset(union)


@dataclass(frozen=True)
class Document:
    id: str
    raw_text: str
    timestamp: datetime
    likes: int = 0
    retweets: int = 0
    lang_hint: str | None = None
    clean_text: str = ""


@dataclass(frozen=True)
class Corpus:
    """Ordered, immutable collection of documents with unique ids."""

    documents: tuple[Document, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise CorpusError(f"duplicate document id: {doc.id!r}")
            seen.add(doc.id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def texts(self, source: str = "clean") -> list[str]:
        if source == "clean":
            return [d.clean_text for d in self.documents]
        if source == "raw":
            return [d.raw_text for d in self.documents]
        raise ValueError(f"unknown text source: {source!r}")

    def doc_ids(self) -> list[str]:
        return [d.id for d in self.documents]


@dataclass(frozen=True)
class KeywordSet:
    """Lowercased, whitespace-trimmed search phrases."""

    keywords: frozenset[str]

    @classmethod
    def of(cls, phrases: Iterable[str]) -> "KeywordSet":
        normalized = {_WS_RE.sub(" ", p.strip().lower()) for p in phrases}
        normalized.discard("")
        return cls(frozenset(normalized))

    @classmethod
    def from_file(cls, path: str | Path) -> "KeywordSet":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.of(lines)

    def __len__(self) -> int:
        return len(self.keywords)

    def __contains__(self, phrase: str) -> bool:
        return phrase in self.keywords


def _parse_timestamp(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_record(line: str) -> Document:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    doc_id = obj["id"]
    text = obj["text"]
    if not isinstance(doc_id, str) or not isinstance(text, str):
        raise ValueError("'id' and 'text' must be strings")
    likes = int(obj.get("likes", 0))
    retweets = int(obj.get("retweets", 0))
    if likes < 0 or retweets < 0:
        raise ValueError("'likes' and 'retweets' must be non-negative")
    lang = obj.get("lang")
    if lang is not None and not isinstance(lang, str):
        raise ValueError("'lang' must be a string when present")
    return Document(
        id=doc_id,
        raw_text=text,
        timestamp=_parse_timestamp(obj["ts"]),
        likes=likes,
        retweets=retweets,
        lang_hint=lang,
    )


def ingest_corpus(path: str | Path) -> Corpus:
    """Read a JSON-lines corpus file, one post object per line.

    Malformed lines are skipped and counted; more than
    ``MALFORMED_LINE_TOLERANCE`` of them aborts ingestion with the offending
    line numbers. Duplicate ids abort immediately.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    documents: list[Document] = []
    bad_lines: list[int] = []
    total = 0
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        total += 1
        try:
            documents.append(_parse_record(line))
        except (ValueError, KeyError, TypeError) as exc:
            bad_lines.append(lineno)
            logger.warning("skipping malformed line %d in %s: %s", lineno, path, exc)

    if total == 0:
        logger.warning("corpus file %s contains no records", path)
    elif len(bad_lines) / total > MALFORMED_LINE_TOLERANCE:
        raise CorpusError(
            f"{len(bad_lines)}/{total} lines malformed in {path} "
            f"(limit {MALFORMED_LINE_TOLERANCE:.0%}); line numbers: {bad_lines}"
        )
    if bad_lines:
        logger.warning("%d malformed lines skipped in %s", len(bad_lines), path)

    return Corpus(documents=tuple(documents), provenance=str(path))


def clean_text(text: str, rules: CleaningRules, lang_hint: str | None = None) -> str:
    """Apply the cleaning rules to one text, returning a space-joined token string."""
    if rules.lowercase:
        text = text.lower()
    if rules.remove_urls:
        text = _URL_RE.sub(" ", text)
    if rules.remove_mentions:
        text = _RT_MARKER_RE.sub("", text)
        text = _MENTION_RE.sub(" ", text)
    if rules.remove_emoji:
        text = _strip_emoji(text)
    if rules.keep_hashtag_word:
        text = _HASHTAG_RE.sub(r"\1", text)
    else:
        text = _HASHTAG_RE.sub(" ", text)
    if rules.remove_punctuation:
        text = _strip_punctuation(text)
    tokens = text.split()
    if rules.remove_stopwords:
        stop = rules.stopwords_for(lang_hint)
        tokens = [t for t in tokens if t not in stop]
    return " ".join(tokens)


def preprocess(corpus: Corpus, rules: CleaningRules) -> Corpus:
    """Populate ``clean_text``, collapse exact duplicates, drop emptied documents.

    Idempotent: cleaning an already-clean token string changes nothing.
    Input order is preserved; the first occurrence of a duplicate wins.
    """
    kept: list[Document] = []
    seen: set[str] = set()
    dropped_empty = 0
    dropped_dupes = 0
    for doc in corpus.documents:
        cleaned = clean_text(doc.raw_text, rules, doc.lang_hint)
        if not cleaned:
            dropped_empty += 1
            continue
        if cleaned in seen:
            dropped_dupes += 1
            continue
        seen.add(cleaned)
        kept.append(replace(doc, clean_text=cleaned))
    if dropped_empty or dropped_dupes:
        logger.info(
            "preprocess dropped %d empty and %d duplicate documents",
            dropped_empty,
            dropped_dupes,
        )
    note = (
        f"{corpus.provenance} | preprocessed: kept {len(kept)}, "
        f"dropped {dropped_empty} empty, {dropped_dupes} duplicates"
    )
    return Corpus(documents=tuple(kept), provenance=note)


def _contains_keyword(clean: str, keywords: KeywordSet) -> bool:
    padded = f" {clean} "
    return any(f" {kw} " in padded for kw in keywords.keywords)


def filter_by_keywords(corpus: Corpus, keywords: KeywordSet) -> Corpus:
    """Keep documents whose clean_text contains a keyword as a token or phrase.

    Matching is on whole tokens ("esports" does not match "sportsmanship");
    multi-word phrases match consecutive tokens.
    """
    if len(keywords) == 0:
        raise CorpusError("keyword set is empty")
    kept = tuple(
        d for d in corpus.documents if _contains_keyword(d.clean_text, keywords)
    )
    return Corpus(documents=kept, provenance=corpus.provenance)


def filter_by_daterange(corpus: Corpus, start: datetime, end: datetime) -> Corpus:
    """Keep documents with start <= timestamp <= end (closed interval, UTC)."""
    if start.tzinfo is None:
        start = start.replace(tzinfo=timezone.utc)
    if end.tzinfo is None:
        end = end.replace(tzinfo=timezone.utc)
    if start > end:
        raise CorpusError(f"start {start.isoformat()} is after end {end.isoformat()}")
    kept = tuple(d for d in corpus.documents if start <= d.timestamp <= end)
    return Corpus(documents=kept, provenance=corpus.provenance)


def saturation_step(
    known: KeywordSet, proposed: KeywordSet
) -> tuple[KeywordSet, bool]:
    """One round of iterative keyword discovery.

    Returns the union of known and proposed phrases, plus whether the round
    was saturated (no phrase outside the known set was proposed).
    """
    updated = KeywordSet(known.keywords | proposed.keywords)
    saturated = proposed.keywords <= known.keywords
    return updated, saturated
