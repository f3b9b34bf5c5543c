"""Topic labels from a chat-completion language model, plus rating tools.

The prompt is built from a fixed three-part template (system + one worked
example + the task) whose task section carries literal ``[KEYWORDS]`` and
``[DOCUMENTS]`` placeholders. Rendering is byte-stable: the same template and
request always produce the same prompt, and placeholder substitution is
positional so documents that themselves contain placeholder-looking strings
are never touched.

For tests and offline runs a deterministic stub client answers every prompt
with the first four topic keywords.
"""

from __future__ import annotations

import concurrent.futures
import csv
import logging
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests

from .topics import TopicModel, fallback_label, truncate_label

logger = logging.getLogger(__name__)

KEYWORDS_TAG = "[KEYWORDS]"
DOCUMENTS_TAG = "[DOCUMENTS]"
ENDPOINT_ENV = "TOPIKIT_LLM_ENDPOINT"
API_KEY_ENV = "TOPIKIT_LLM_API_KEY"
LLM_RETRIES = 3
DEFAULT_MODEL_ID = "gpt-4-turbo-preview"
LABEL_MAX_CHARS = 120
VERDICTS = ("accept", "reject")


class LabelingError(Exception):
    """Template, parsing, or provider failures."""


class AuthError(LabelingError):
    """Credentials rejected; not retryable."""


@dataclass(frozen=True)
class PromptTemplate:
    system_prompt: str
    example_prompt: str
    main_prompt: str

    def __post_init__(self) -> None:
        for tag in (KEYWORDS_TAG, DOCUMENTS_TAG):
            if self.main_prompt.count(tag) != 1:
                raise LabelingError(
                    f"template task section must contain {tag} exactly once"
                )

    @property
    def text(self) -> str:
        return self.system_prompt + self.example_prompt + self.main_prompt


def default_template() -> PromptTemplate:
    """The packaged labeling template (see data/label_prompt.txt)."""
    text = (
        resources.files("topikit")
        .joinpath("data/label_prompt.txt")
        .read_text(encoding="utf-8")
    )
    return PromptTemplate(system_prompt="", example_prompt="", main_prompt=text)


def load_template(path: str | Path) -> PromptTemplate:
    """Read a template from a UTF-8 text file holding the full prompt text."""
    return PromptTemplate(
        system_prompt="",
        example_prompt="",
        main_prompt=Path(path).read_text(encoding="utf-8"),
    )


@dataclass(frozen=True)
class ModelParams:
    model: str = DEFAULT_MODEL_ID
    temperature: float = 0.0
    max_tokens: int = 64


@dataclass(frozen=True)
class LabelRequest:
    topic_id: int
    keywords: tuple[str, ...]
    documents: tuple[str, ...]
    model_params: ModelParams = field(default_factory=ModelParams)

    def __post_init__(self) -> None:
        if not self.keywords:
            raise LabelingError("label request needs at least one keyword")
        if not self.documents:
            raise LabelingError("label request needs at least one document")


def build_prompt(template: PromptTemplate, request: LabelRequest) -> str:
    """Render the template: documents as '- ' lines, keywords comma-joined.

    Placeholders are located in the template before any substitution, so
    request content containing a literal tag never gets re-substituted.
    """
    text = template.text
    rendered_docs = "\n".join(f"- {doc}" for doc in request.documents)
    rendered_keywords = ", ".join(request.keywords)
    spots = sorted(
        (
            (text.index(DOCUMENTS_TAG), DOCUMENTS_TAG, rendered_docs),
            (text.index(KEYWORDS_TAG), KEYWORDS_TAG, rendered_keywords),
        ),
        reverse=True,
    )
    for position, tag, replacement in spots:
        text = text[:position] + replacement + text[position + len(tag) :]
    return text


_QUOTE_PAIRS = {'"': '"', "'": "'", "[": "]", "(": ")", "{": "}"}


def parse_label(raw: str) -> str:
    """Normalize a model completion into a single-line label."""
    label = raw.strip()
    if len(label) >= 2 and _QUOTE_PAIRS.get(label[0]) == label[-1]:
        label = label[1:-1].strip()
    label = re.sub(r"\s*\n+\s*", " ", label).strip()
    if not label:
        raise LabelingError("empty label after cleaning")
    return label


class StubLabelClient:
    """Deterministic offline client: answers with the first four keywords.

    It recovers the keywords from the rendered prompt's final keyword line,
    so it composes with :func:`build_prompt` like a real provider would.
    """

    def complete(self, prompt: str) -> str:
        marker = "keywords: '"
        start = prompt.rfind(marker)
        if start == -1:
            raise LabelingError("stub client could not locate keywords in prompt")
        start += len(marker)
        end = prompt.find("'", start)
        if end == -1:
            raise LabelingError("stub client could not locate keywords in prompt")
        keywords = [k.strip() for k in prompt[start:end].split(",") if k.strip()]
        return " ".join(keywords[:4])


class HttpChatClient:
    """Minimal chat-completion JSON client with bounded retries.

    Endpoint and credentials come from the environment unless given
    explicitly; transient failures (timeouts, 5xx, 429) are retried with
    exponential backoff, auth failures abort immediately.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        params: ModelParams | None = None,
        retries: int = LLM_RETRIES,
    ) -> None:
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.params = params or ModelParams()
        self.retries = retries
        if not self.endpoint:
            raise LabelingError(
                f"no labeling endpoint configured (set {ENDPOINT_ENV})"
            )

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.params.model,
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }
        delay = 0.5
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=60
                )
                if resp.status_code in (401, 403):
                    raise AuthError(f"authentication failed ({resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise LabelingError(f"transient provider error {resp.status_code}")
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except AuthError:
                raise
            except (requests.RequestException, LabelingError, KeyError) as exc:
                last_error = exc
                if attempt < self.retries:
                    logger.warning(
                        "label request failed (%s); retry %d/%d in %.1fs",
                        exc,
                        attempt + 1,
                        self.retries,
                        delay,
                    )
                    time.sleep(delay)
                    delay *= 2
        raise LabelingError(f"label provider failed after retries: {last_error}")


def request_label(client, prompt: str) -> str:
    """One completion from the provider; retry policy lives in the client."""
    return client.complete(prompt)


def label_topics(
    model: TopicModel,
    documents_by_id: dict[str, str],
    client,
    template: PromptTemplate | None = None,
    params: ModelParams | None = None,
    concurrency: int = 4,
) -> dict[int, str]:
    """Label every topic, falling back to its top terms on provider failure."""
    template = template or default_template()
    params = params or ModelParams()

    def one(topic) -> tuple[int, str]:
        request = LabelRequest(
            topic_id=topic.id,
            keywords=topic.top_terms,
            documents=tuple(
                documents_by_id[doc_id]
                for doc_id in topic.representative_doc_ids
                if doc_id in documents_by_id
            )
            or ("(no representative documents)",),
            model_params=params,
        )
        prompt = build_prompt(template, request)
        try:
            label = parse_label(request_label(client, prompt))
        except AuthError:
            raise
        except LabelingError as exc:
            label = fallback_label(topic.top_terms)
            logger.warning(
                "labeling failed for topic %d (%s); using fallback %r",
                topic.id,
                exc,
                label,
            )
        return topic.id, truncate_label(label, LABEL_MAX_CHARS)

    if concurrency <= 1 or len(model.topics) <= 1:
        return dict(one(t) for t in model.topics)
    with concurrent.futures.ThreadPoolExecutor(max_workers=concurrency) as pool:
        return dict(pool.map(one, model.topics))


@dataclass(frozen=True)
class RatingSheet:
    rater_id: str
    verdicts: dict[int, str]

    def __post_init__(self) -> None:
        for topic_id, verdict in self.verdicts.items():
            if verdict not in VERDICTS:
                raise LabelingError(
                    f"verdict for topic {topic_id} must be one of {VERDICTS}"
                )


def load_rating_sheet(path: str | Path, rater_id: str | None = None) -> RatingSheet:
    """CSV with a (topic_id, verdict) row per topic; header optional."""
    verdicts: dict[int, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("topic_id", "topic"):
                continue
            verdicts[int(row[0])] = row[1].strip().lower()
    return RatingSheet(rater_id=rater_id or str(path), verdicts=verdicts)


def rate_agreement(a: RatingSheet, b: RatingSheet) -> float:
    """Fraction of topics with identical verdicts; sheets must cover the same ids."""
    if set(a.verdicts) != set(b.verdicts):
        raise LabelingError("rating sheets cover different topic ids")
    if not a.verdicts:
        raise LabelingError("rating sheets are empty")
    matches = sum(1 for tid, v in a.verdicts.items() if b.verdicts[tid] == v)
    return matches / len(a.verdicts)
