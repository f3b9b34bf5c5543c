from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topikit.labeling import (
    AuthError,
    HttpChatClient,
    LabelingError,
    LabelRequest,
    ModelParams,
    PromptTemplate,
    RatingSheet,
    StubLabelClient,
    build_prompt,
    default_template,
    label_topics,
    load_rating_sheet,
    load_template,
    parse_label,
    rate_agreement,
    request_label,
)
from topikit.topics import TopicInfo, TopicModel

DATA = Path(__file__).parent / "data"


def _request(keywords=("a", "b"), documents=("d1", "d2")):
    return LabelRequest(topic_id=0, keywords=tuple(keywords), documents=tuple(documents))


class TestBuildPrompt:
    def test_substitution_contract(self):
        prompt = build_prompt(default_template(), _request())
        assert "'a, b'" in prompt
        assert "- d1\n- d2" in prompt
        assert "[KEYWORDS]" not in prompt
        assert "[DOCUMENTS]" not in prompt

    def test_golden_file_byte_equal(self):
        request = LabelRequest(
            topic_id=5,
            keywords=(
                "event", "medal", "esports", "debut", "hangzhou",
                "medals", "first", "asiangames", "make", "sport",
            ),
            documents=(
                "esports makes its first appearance as a full medal event",
                "fans celebrate the debut of competitive gaming on the big stage",
                "a packed arena watches the opening matches in hangzhou",
            ),
        )
        prompt = build_prompt(default_template(), request)
        golden = (DATA / "golden_prompt.txt").read_text(encoding="utf-8")
        assert prompt == golden

    def test_document_containing_placeholder_untouched(self):
        request = _request(documents=("doc with literal [KEYWORDS] inside", "d2"))
        prompt = build_prompt(default_template(), request)
        assert "doc with literal [KEYWORDS] inside" in prompt
        # the template's own tag was substituted, the document's copy stays
        assert prompt.count("[KEYWORDS]") == 1

    def test_keyword_containing_documents_tag(self):
        request = _request(keywords=("weird[DOCUMENTS]", "b"))
        prompt = build_prompt(default_template(), request)
        assert "weird[DOCUMENTS], b" in prompt
        assert "- d1" in prompt

    def test_prompt_deterministic(self):
        r = _request()
        assert build_prompt(default_template(), r) == build_prompt(default_template(), r)

    def test_template_validation(self):
        with pytest.raises(LabelingError):
            PromptTemplate("", "", "no placeholders at all")
        with pytest.raises(LabelingError):
            PromptTemplate("", "", "[KEYWORDS] [KEYWORDS] [DOCUMENTS]")

    def test_no_placeholder_leakage_fuzzed(self):
        rng = random.Random(202)
        alphabet = "abcdefghijklmnopqrstuvwxyz 王者é[]"
        template = default_template()
        for _ in range(200):
            keywords = tuple(
                "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12))).strip()
                or "k"
                for _ in range(rng.randint(1, 10))
            )
            documents = tuple(
                "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 60))).strip()
                or "d"
                for _ in range(rng.randint(1, 10))
            )
            prompt = build_prompt(template, _request(keywords, documents))
            body = prompt
            for keyword in keywords:
                body = body.replace(keyword, "")
            for document in documents:
                body = body.replace(document, "")
            assert "[KEYWORDS]" not in body
            assert "[DOCUMENTS]" not in body

    def test_packaged_template_file_matches_default(self):
        from importlib import resources

        text = (
            resources.files("topikit")
            .joinpath("data/label_prompt.txt")
            .read_text(encoding="utf-8")
        )
        assert default_template().text == text

    def test_template_file_roundtrip(self, tmp_path):
        path = tmp_path / "tpl.txt"
        path.write_text(default_template().text, encoding="utf-8")
        loaded = load_template(path)
        assert loaded.text == default_template().text


class TestParseLabel:
    def test_trim_and_unquote(self):
        assert parse_label("  'Esports at the Asian Games'\n") == "Esports at the Asian Games"

    def test_long_phrase_unchanged(self):
        label = "Esports as a Medal Event at the Asian Games"
        assert parse_label(label) == label

    def test_brackets_stripped_once(self):
        assert parse_label("[Nested [inner] label]") == "Nested [inner] label"

    def test_newlines_collapsed(self):
        assert parse_label("first line\nsecond line") == "first line second line"

    def test_empty_is_error(self):
        with pytest.raises(LabelingError):
            parse_label("")
        with pytest.raises(LabelingError):
            parse_label("  ''  ")


class TestClients:
    def test_stub_returns_first_four_keywords(self):
        request = _request(
            keywords=("esports", "medal", "debut", "hangzhou", "extra"),
            documents=("doc",),
        )
        prompt = build_prompt(default_template(), request)
        assert request_label(StubLabelClient(), prompt) == "esports medal debut hangzhou"

    def test_http_transient_then_success(self, monkeypatch):
        calls = {"n": 0}

        class Resp:
            def __init__(self, code):
                self.status_code = code

            def raise_for_status(self):
                pass

            def json(self):
                return {"choices": [{"message": {"content": "A Label"}}]}

        def post(*a, **k):
            calls["n"] += 1
            return Resp(500 if calls["n"] <= 2 else 200)

        monkeypatch.setattr("topikit.labeling.requests.post", post)
        monkeypatch.setattr("topikit.labeling.time.sleep", lambda s: None)
        client = HttpChatClient(endpoint="http://llm", api_key="k")
        assert client.complete("p") == "A Label"
        assert calls["n"] == 3

    def test_http_auth_failure_fatal(self, monkeypatch):
        class Resp:
            status_code = 401

            def raise_for_status(self):
                pass

            def json(self):
                return {}

        monkeypatch.setattr("topikit.labeling.requests.post", lambda *a, **k: Resp())
        client = HttpChatClient(endpoint="http://llm")
        with pytest.raises(AuthError):
            client.complete("p")

    def test_http_requires_endpoint(self, monkeypatch):
        monkeypatch.delenv("TOPIKIT_LLM_ENDPOINT", raising=False)
        with pytest.raises(LabelingError, match="endpoint"):
            HttpChatClient()

    def test_label_topics_fallback_after_timeouts(self, monkeypatch, caplog):
        class AlwaysDown:
            def complete(self, prompt):
                raise LabelingError("timeout")

        model = TopicModel(
            topics=(
                TopicInfo(
                    id=0,
                    count=3,
                    ctfidf={},
                    top_terms=("gold", "medal", "event", "win", "extra"),
                    representative_doc_ids=("d0",),
                ),
            )
        )
        with caplog.at_level("WARNING"):
            labels = label_topics(model, {"d0": "text"}, AlwaysDown(), concurrency=1)
        assert labels == {0: "gold medal event win"}
        assert any("fallback" in r.message for r in caplog.records)

    def test_label_topics_stub_end_to_end(self):
        model = TopicModel(
            topics=(
                TopicInfo(
                    id=0,
                    count=2,
                    ctfidf={},
                    top_terms=("alpha", "beta", "gamma", "delta", "eps"),
                    representative_doc_ids=("d0", "d1"),
                ),
                TopicInfo(
                    id=1,
                    count=1,
                    ctfidf={},
                    top_terms=("one", "two", "three", "four"),
                    representative_doc_ids=("d2",),
                ),
            )
        )
        docs = {"d0": "t0", "d1": "t1", "d2": "t2"}
        labels = label_topics(model, docs, StubLabelClient(), concurrency=4)
        assert labels == {0: "alpha beta gamma delta", 1: "one two three four"}


class TestRatingSheets:
    def _sheet(self, rater, verdicts):
        return RatingSheet(rater_id=rater, verdicts=verdicts)

    def test_identical_sheets(self):
        verdicts = {i: "accept" for i in range(35)}
        assert rate_agreement(self._sheet("a", verdicts), self._sheet("b", dict(verdicts))) == 1.0

    def test_thirty_four_of_thirty_five(self):
        a = {i: "accept" for i in range(35)}
        b = dict(a)
        b[7] = "reject"
        assert rate_agreement(self._sheet("a", a), self._sheet("b", b)) == pytest.approx(34 / 35)

    def test_disjoint_ids_error(self):
        with pytest.raises(LabelingError, match="different topic ids"):
            rate_agreement(
                self._sheet("a", {0: "accept"}), self._sheet("b", {1: "accept"})
            )

    def test_invalid_verdict_rejected(self):
        with pytest.raises(LabelingError):
            RatingSheet(rater_id="x", verdicts={0: "maybe"})

    def test_csv_loading(self, tmp_path):
        path = tmp_path / "sheet.csv"
        path.write_text("topic_id,verdict\n0,accept\n1,reject\n", encoding="utf-8")
        sheet = load_rating_sheet(path, rater_id="r1")
        assert sheet.verdicts == {0: "accept", 1: "reject"}

    @settings(max_examples=50, deadline=None)
    @given(
        st.dictionaries(
            st.integers(min_value=0, max_value=20),
            st.sampled_from(["accept", "reject"]),
            min_size=1,
        ),
        st.randoms(),
    )
    def test_agreement_symmetric(self, verdicts, rnd):
        other = {k: rnd.choice(["accept", "reject"]) for k in verdicts}
        a = self._sheet("a", verdicts)
        b = self._sheet("b", other)
        assert rate_agreement(a, b) == rate_agreement(b, a)


class TestModelParams:
    def test_defaults_match_config(self):
        params = ModelParams()
        assert params.model == "gpt-4-turbo-preview"
        assert params.temperature == 0.0
