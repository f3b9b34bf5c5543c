"""Topic representations from clustered documents.

Each topic's member documents are concatenated into one class document and
scored with class-based TF-IDF: W[t, c] = tf[t, c] * ln(1 + A / f[t]), where
A is the average word count per class and f[t] the term's total frequency
across classes. Natural log is used throughout; the base only rescales
weights uniformly, but fixing it keeps results reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .cluster import ClusterAssignment
from .corpus import Corpus

logger = logging.getLogger(__name__)

REASSIGN_STRATEGIES = ("ctfidf", "distributions")


class TopicsError(Exception):
    """Representation failures: no clusters, bad policy, unknown strategy."""


@dataclass(frozen=True)
class VocabPolicy:
    """Stop-word pruning applied when building topic representations."""

    stopwords: frozenset[str] = frozenset()
    max_doc_freq: float = 0.5  # terms in more than this fraction of docs drop

    def __post_init__(self) -> None:
        if not 0.0 < self.max_doc_freq <= 1.0:
            raise TopicsError("max_doc_freq must be in (0, 1]")


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    doc_freq: dict[str, int]
    stop_filtered: frozenset[str]

    def index(self) -> dict[str, int]:
        return {term: i for i, term in enumerate(self.terms)}

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True)
class ClassTermCounts:
    tf: np.ndarray                 # (c, t) int64
    class_total_words: np.ndarray  # (c,) int64
    A: float                       # average words per class
    f: np.ndarray                  # (t,) int64 total term frequency

    @property
    def n_classes(self) -> int:
        return self.tf.shape[0]

    @property
    def n_terms(self) -> int:
        return self.tf.shape[1]


@dataclass(frozen=True)
class TopicInfo:
    id: int
    count: int
    ctfidf: dict[str, float]
    top_terms: tuple[str, ...]
    representative_doc_ids: tuple[str, ...]
    label: str | None = None


@dataclass(frozen=True)
class TopicModel:
    topics: tuple[TopicInfo, ...]
    ctfidf_normalized: bool = False

    def topic(self, topic_id: int) -> TopicInfo:
        for t in self.topics:
            if t.id == topic_id:
                return t
        raise KeyError(topic_id)

    def topic_ids(self) -> list[int]:
        return [t.id for t in self.topics]

    def total_count(self) -> int:
        return sum(t.count for t in self.topics)

    def with_labels(self, labels: dict[int, str]) -> "TopicModel":
        updated = tuple(
            replace(t, label=labels.get(t.id, t.label)) for t in self.topics
        )
        return TopicModel(topics=updated, ctfidf_normalized=self.ctfidf_normalized)

    def with_counts(self, counts: dict[int, int]) -> "TopicModel":
        updated = tuple(
            replace(t, count=counts.get(t.id, t.count)) for t in self.topics
        )
        return TopicModel(topics=updated, ctfidf_normalized=self.ctfidf_normalized)


def _tokenize(clean_text: str) -> list[str]:
    return clean_text.split()


def build_class_counts(
    corpus: Corpus,
    assignment: ClusterAssignment,
    policy: VocabPolicy | None = None,
) -> tuple[Vocabulary, ClassTermCounts]:
    """Concatenate each topic's documents into a class and count terms.

    Noise documents are excluded from the counts. Terms on the explicit stop
    list and terms whose document frequency (over all documents in the
    corpus) exceeds the policy cutoff are removed and reported in
    ``stop_filtered``.
    """
    policy = policy or VocabPolicy()
    labels = assignment.labels
    if len(corpus) != labels.shape[0]:
        raise TopicsError("assignment is not aligned to the corpus")
    n_clusters = assignment.n_clusters
    if n_clusters == 0 or int(np.sum(labels >= 0)) == 0:
        raise TopicsError("no clustered documents to represent")

    doc_freq: dict[str, int] = {}
    for doc in corpus:
        for term in set(_tokenize(doc.clean_text)):
            doc_freq[term] = doc_freq.get(term, 0) + 1

    cutoff = policy.max_doc_freq * len(corpus)
    stop_filtered = {
        t for t in doc_freq if t in policy.stopwords or doc_freq[t] > cutoff
    }

    class_counts: list[dict[str, int]] = [dict() for _ in range(n_clusters)]
    kept_terms: dict[str, None] = {}  # insertion-ordered term registry
    for doc, label in zip(corpus, labels):
        if label < 0:
            continue
        counts = class_counts[int(label)]
        for term in _tokenize(doc.clean_text):
            if term in stop_filtered:
                continue
            kept_terms.setdefault(term, None)
            counts[term] = counts.get(term, 0) + 1

    terms = tuple(sorted(kept_terms))
    index = {term: i for i, term in enumerate(terms)}
    tf = np.zeros((n_clusters, len(terms)), dtype=np.int64)
    for c, counts in enumerate(class_counts):
        for term, count in counts.items():
            tf[c, index[term]] = count
    class_totals = tf.sum(axis=1)
    vocab = Vocabulary(
        terms=terms,
        doc_freq={t: doc_freq[t] for t in terms},
        stop_filtered=frozenset(stop_filtered),
    )
    counts = ClassTermCounts(
        tf=tf,
        class_total_words=class_totals,
        A=float(class_totals.mean()) if n_clusters else 0.0,
        f=tf.sum(axis=0),
    )
    return vocab, counts


def compute_ctfidf(counts: ClassTermCounts, l2_normalize: bool = False) -> np.ndarray:
    """W[t, c] = tf[t, c] * ln(1 + A / f[t]); optionally L2-normalized rows."""
    f = counts.f.astype(np.float64)
    safe_f = np.where(f > 0, f, 1.0)
    idf = np.where(f > 0, np.log1p(counts.A / safe_f), 0.0)
    W = counts.tf.astype(np.float64) * idf[None, :]
    if l2_normalize:
        norms = np.linalg.norm(W, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        W = W / norms
    return W


def top_terms(W: np.ndarray, vocab: Vocabulary, n: int = 10) -> list[list[str]]:
    """Highest-weight terms per topic, ties broken alphabetically."""
    if n < 1:
        raise TopicsError("n must be >= 1")
    out: list[list[str]] = []
    for row in W:
        ranked = sorted(
            (i for i in range(len(vocab)) if row[i] > 0.0),
            key=lambda i: (-row[i], vocab.terms[i]),
        )
        out.append([vocab.terms[i] for i in ranked[:n]])
    return out


def _doc_term_vector(doc_text: str, index: dict[str, int], n_terms: int) -> np.ndarray:
    vec = np.zeros(n_terms)
    for term in _tokenize(doc_text):
        i = index.get(term)
        if i is not None:
            vec[i] += 1.0
    return vec


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def representative_documents(
    topic_id: int,
    corpus: Corpus,
    assignment: ClusterAssignment,
    W: np.ndarray,
    vocab: Vocabulary,
    nr_docs: int = 10,
) -> list[str]:
    """Member doc ids ranked by cosine between term counts and the topic row."""
    index = vocab.index()
    row = W[topic_id]
    scored: list[tuple[float, int, str]] = []
    for pos, (doc, label) in enumerate(zip(corpus, assignment.labels)):
        if int(label) != topic_id:
            continue
        vec = _doc_term_vector(doc.clean_text, index, len(vocab))
        scored.append((-_cosine(vec, row), pos, doc.id))
    if not scored:
        raise TopicsError(f"topic {topic_id} has no member documents")
    scored.sort()
    return [doc_id for _, _, doc_id in scored[:nr_docs]]


def build_topic_model(
    corpus: Corpus,
    assignment: ClusterAssignment,
    policy: VocabPolicy | None = None,
    n_terms: int = 10,
    nr_docs: int = 10,
    l2_normalize: bool = False,
) -> tuple[TopicModel, Vocabulary, np.ndarray]:
    """Convenience wrapper building the full per-topic representation."""
    vocab, counts = build_class_counts(corpus, assignment, policy)
    W = compute_ctfidf(counts, l2_normalize=l2_normalize)
    terms_per_topic = top_terms(W, vocab, n_terms)
    label_counts = assignment.counts()
    topics = []
    for topic_id in range(assignment.n_clusters):
        row = W[topic_id]
        nonzero = {
            vocab.terms[i]: float(row[i]) for i in np.flatnonzero(row > 0.0)
        }
        reps = representative_documents(
            topic_id, corpus, assignment, W, vocab, nr_docs
        )
        topics.append(
            TopicInfo(
                id=topic_id,
                count=label_counts.get(topic_id, 0),
                ctfidf=nonzero,
                top_terms=tuple(terms_per_topic[topic_id]),
                representative_doc_ids=tuple(reps),
            )
        )
    model = TopicModel(topics=tuple(topics), ctfidf_normalized=l2_normalize)
    return model, vocab, W


def _score_ctfidf(vec: np.ndarray, W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=1)
    vnorm = np.linalg.norm(vec)
    if vnorm == 0.0:
        return np.zeros(W.shape[0])
    safe = np.where(norms == 0.0, 1.0, norms)
    sims = (W @ vec) / (safe * vnorm)
    sims[norms == 0.0] = 0.0
    return sims


def _score_distributions(
    tokens: list[str],
    index: dict[str, int],
    n_terms: int,
    W: np.ndarray,
    window: int,
    stride: int,
) -> np.ndarray:
    """Sum sliding-window similarities per topic, normalized to a distribution."""
    if not tokens:
        return np.zeros(W.shape[0])
    totals = np.zeros(W.shape[0])
    starts = range(0, max(len(tokens) - window, 0) + 1, stride)
    for start in starts:
        chunk = tokens[start : start + window]
        vec = np.zeros(n_terms)
        for term in chunk:
            i = index.get(term)
            if i is not None:
                vec[i] += 1.0
        totals += np.clip(_score_ctfidf(vec, W), 0.0, None)
    mass = totals.sum()
    if mass == 0.0:
        return totals
    return totals / mass


def reassign_outliers(
    assignment: ClusterAssignment,
    corpus: Corpus,
    W: np.ndarray,
    vocab: Vocabulary,
    strategy: str = "ctfidf",
    threshold: float = 0.0,
    window: int = 4,
    stride: int = 1,
) -> ClusterAssignment:
    """Assign noise documents to topics by c-TF-IDF similarity.

    ``ctfidf`` compares each noise document's term vector to every topic row;
    ``distributions`` scores sliding token windows and aggregates them into a
    per-topic distribution. Either way the document moves to the argmax topic
    when the winning score reaches the threshold, with the score recorded as
    its strength. Non-noise labels never change; documents whose tokens were
    all stop-filtered keep their noise label.
    """
    if strategy not in REASSIGN_STRATEGIES:
        raise TopicsError(
            f"unknown strategy {strategy!r}; expected one of {REASSIGN_STRATEGIES}"
        )
    if assignment.n_clusters < 1:
        raise TopicsError("need at least one topic to reassign outliers")
    if len(corpus) != assignment.labels.shape[0]:
        raise TopicsError("assignment is not aligned to the corpus")
    index = vocab.index()
    labels = assignment.labels.copy()
    strengths = assignment.strengths.copy()
    still_noise = 0
    for pos, doc in enumerate(corpus):
        if labels[pos] != -1:
            continue
        tokens = [t for t in _tokenize(doc.clean_text) if t in index]
        if not tokens:
            still_noise += 1
            continue
        if strategy == "ctfidf":
            vec = _doc_term_vector(doc.clean_text, index, len(vocab))
            scores = _score_ctfidf(vec, W)
        else:
            scores = _score_distributions(
                tokens, index, len(vocab), W, window, stride
            )
        best = int(np.argmax(scores))
        if scores[best] >= threshold:
            labels[pos] = best
            strengths[pos] = float(np.clip(scores[best], 0.0, 1.0))
        else:
            still_noise += 1
    if still_noise:
        logger.info("%d outliers could not be reassigned", still_noise)
    return ClusterAssignment(
        labels=labels, strengths=strengths, n_clusters=assignment.n_clusters
    )


def topic_map_coordinates(
    vectors: np.ndarray,
    sizes: list[int],
    seed: int = 0,
) -> list[tuple[int, float, float, int]]:
    """Reduce per-topic vectors to 2-D map points (topic_id, x, y, size).

    Four or more topics go through the full graph layout; two or three use
    classical metric scaling of the cosine distances (a stochastic layout is
    degenerate there: the fuzzy graph of two points carries no distance
    information); one topic maps to a single centered point.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    t = vectors.shape[0]
    if t != len(sizes):
        raise TopicsError("one size per topic vector is required")
    if t == 0:
        raise TopicsError("no topics to map")
    if t == 1:
        logger.warning("single topic; map degenerates to one centered point")
        return [(0, 0.0, 0.0, int(sizes[0]))]
    if t <= 3:
        coords = _classical_mds_2d(vectors)
    else:
        from .reduce import LayoutParams, ReduceConfig, reduce as reduce_fn

        config = ReduceConfig(
            n_neighbors=min(15, t - 1),
            metric="cosine",
            layout=LayoutParams(n_components=2, seed=seed),
        )
        coords = reduce_fn(vectors, config)
    return [
        (i, float(coords[i, 0]), float(coords[i, 1]), int(sizes[i]))
        for i in range(t)
    ]


def _classical_mds_2d(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    vn = vectors / safe
    d = 1.0 - vn @ vn.T
    np.clip(d, 0.0, None, out=d)
    sq = d ** 2
    n = sq.shape[0]
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ sq @ J
    eigenvalues, eigenvectors = np.linalg.eigh(B)
    order = np.argsort(eigenvalues)[::-1][:2]
    vals = np.clip(eigenvalues[order], 0.0, None)
    coords = eigenvectors[:, order] * np.sqrt(vals)[None, :]
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    return coords


def fallback_label(terms: tuple[str, ...] | list[str]) -> str:
    """Label used when no language-model label is available."""
    if not terms:
        return "(unlabeled)"
    return " ".join(terms[:4])


def truncate_label(label: str, limit: int = 120) -> str:
    """Cap label length at a word boundary with an ellipsis."""
    if len(label) <= limit:
        return label
    cut = label[: limit - 1]
    trimmed = cut.rsplit(" ", 1)[0] if " " in cut else cut
    return trimmed + "…"


def conservation_check(
    model: TopicModel, assignment: ClusterAssignment
) -> None:
    """Assert topic counts plus noise equal the total document count."""
    total = int(assignment.labels.shape[0])
    assigned = model.total_count() + assignment.noise_count()
    if assigned != total:
        raise TopicsError(
            f"count conservation violated: {assigned} counted vs {total} documents"
        )
