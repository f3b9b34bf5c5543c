"""Macro-theme aggregation and report emission.

Themes are a human-supplied mapping from theme names to topic ids; nothing
here induces groupings. Percentages are rounded half-away-from-zero to two
decimals. Topics missing from the mapping are reported under the reserved
"(unmapped)" name so a partial mapping still produces a closed table.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .topics import TopicModel

logger = logging.getLogger(__name__)

UNMAPPED = "(unmapped)"
FORMATS = ("csv", "json", "markdown")


class ReportError(Exception):
    """Invalid theme mappings or unwritable outputs."""


@dataclass(frozen=True)
class Theme:
    name: str
    topic_ids: frozenset[int]


@dataclass(frozen=True)
class ThemeMapping:
    themes: tuple[Theme, ...]

    @classmethod
    def from_file(cls, path: str | Path) -> "ThemeMapping":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise ReportError("theme mapping file must hold a JSON list")
        themes = []
        for entry in raw:
            themes.append(
                Theme(
                    name=str(entry["name"]),
                    topic_ids=frozenset(int(t) for t in entry["topic_ids"]),
                )
            )
        return cls(themes=tuple(themes))

    def validate_against(self, model: TopicModel) -> None:
        known = set(model.topic_ids())
        seen: dict[int, str] = {}
        for theme in self.themes:
            if theme.name == UNMAPPED:
                raise ReportError(f"theme name {UNMAPPED!r} is reserved")
            for topic_id in theme.topic_ids:
                if topic_id in seen:
                    raise ReportError(
                        f"topic {topic_id} appears in both "
                        f"{seen[topic_id]!r} and {theme.name!r}"
                    )
                seen[topic_id] = theme.name
                if topic_id not in known:
                    raise ReportError(f"unknown topic id {topic_id} in {theme.name!r}")


@dataclass(frozen=True)
class ThemeEntry:
    name: str
    topic_ids: tuple[int, ...]
    count: int
    percentage: float


@dataclass(frozen=True)
class ThemeSummary:
    entries: tuple[ThemeEntry, ...]
    total: int


def round2(value: float) -> float:
    """Round to 2 decimals, halves away from zero."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def aggregate_themes(model: TopicModel, mapping: ThemeMapping) -> ThemeSummary:
    """Sum member-topic counts per theme and compute percentage of total."""
    mapping.validate_against(model)
    counts = {t.id: t.count for t in model.topics}
    total = sum(counts.values())
    if total == 0:
        raise ReportError("topic model has zero documents")
    entries = []
    mapped: set[int] = set()
    for theme in mapping.themes:
        ids = tuple(sorted(theme.topic_ids))
        mapped.update(ids)
        count = sum(counts[i] for i in ids)
        entries.append(
            ThemeEntry(
                name=theme.name,
                topic_ids=ids,
                count=count,
                percentage=round2(100.0 * count / total),
            )
        )
    leftover = tuple(sorted(set(counts) - mapped))
    if leftover:
        count = sum(counts[i] for i in leftover)
        entries.append(
            ThemeEntry(
                name=UNMAPPED,
                topic_ids=leftover,
                count=count,
                percentage=round2(100.0 * count / total),
            )
        )
        logger.warning("%d topics are not mapped to any theme", len(leftover))
    return ThemeSummary(entries=tuple(entries), total=total)


def _topic_rows(model: TopicModel, n_terms: int = 10) -> list[dict]:
    rows = []
    for t in sorted(model.topics, key=lambda t: t.id):
        terms = list(t.top_terms[:n_terms]) + [""] * (n_terms - len(t.top_terms))
        rows.append({"topic_id": t.id, "count": t.count, "terms": terms})
    return rows


def _label_rows(model: TopicModel) -> list[dict]:
    return [
        {"topic_id": t.id, "count": t.count, "label": t.label or ""}
        for t in sorted(model.topics, key=lambda t: t.id)
    ]


def _theme_rows(summary: ThemeSummary) -> list[dict]:
    return [
        {
            "theme": e.name,
            "topic_ids": list(e.topic_ids),
            "count": e.count,
            "percentage": e.percentage,
        }
        for e in summary.entries
    ]


def _map_rows(
    map_points: list[tuple[int, float, float, int]], model: TopicModel
) -> list[dict]:
    labels = {t.id: t.label or "" for t in model.topics}
    return [
        {
            "topic_id": tid,
            "x": x,
            "y": y,
            "size": size,
            "label": labels.get(tid, ""),
        }
        for tid, x, y, size in map_points
    ]


def _write_json(path: Path, rows: list[dict]) -> None:
    path.write_text(
        json.dumps(rows, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_report(
    model: TopicModel,
    summary: ThemeSummary,
    map_points: list[tuple[int, float, float, int]],
    out_dir: str | Path,
    formats: tuple[str, ...] = ("csv", "json"),
    n_terms: int = 10,
) -> dict[str, Path]:
    """Write the report bundle; identical records in every requested format.

    Produces topics.{csv,json}, labels.{csv,json}, themes.{csv,json} and
    map.json (plus report.md when markdown is requested). Returns the paths
    keyed by artifact name.
    """
    for fmt in formats:
        if fmt not in FORMATS:
            raise ReportError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out}: {exc}") from exc

    topic_rows = _topic_rows(model, n_terms)
    label_rows = _label_rows(model)
    theme_rows = _theme_rows(summary)
    map_rows = _map_rows(map_points, model)
    written: dict[str, Path] = {}

    try:
        if "json" in formats:
            for name, rows in (
                ("topics", topic_rows),
                ("labels", label_rows),
                ("themes", theme_rows),
            ):
                path = out / f"{name}.json"
                _write_json(path, rows)
                written[f"{name}.json"] = path
        if "csv" in formats:
            term_cols = [f"term_{i}" for i in range(1, n_terms + 1)]
            _write_csv(
                out / "topics.csv",
                ["topic_id", "count", *term_cols],
                [[r["topic_id"], r["count"], *r["terms"]] for r in topic_rows],
            )
            written["topics.csv"] = out / "topics.csv"
            _write_csv(
                out / "labels.csv",
                ["topic_id", "count", "label"],
                [[r["topic_id"], r["count"], r["label"]] for r in label_rows],
            )
            written["labels.csv"] = out / "labels.csv"
            _write_csv(
                out / "themes.csv",
                ["theme", "topic_ids", "count", "percentage"],
                [
                    [
                        r["theme"],
                        " ".join(str(i) for i in r["topic_ids"]),
                        r["count"],
                        f"{r['percentage']:.2f}",
                    ]
                    for r in theme_rows
                ],
            )
            written["themes.csv"] = out / "themes.csv"
        # Map data is plot-ready JSON regardless of the table format.
        _write_json(out / "map.json", map_rows)
        written["map.json"] = out / "map.json"
        if "markdown" in formats:
            path = out / "report.md"
            path.write_text(
                _render_markdown(topic_rows, label_rows, theme_rows, summary),
                encoding="utf-8",
            )
            written["report.md"] = path
    except OSError as exc:
        raise ReportError(f"failed writing report bundle: {exc}") from exc
    return written


def _render_markdown(topic_rows, label_rows, theme_rows, summary) -> str:
    lines = ["# Topic report", "", f"Total documents: {summary.total}", ""]
    lines += ["## Topics", "", "| topic | count | terms |", "|---|---|---|"]
    for r in topic_rows:
        terms = ", ".join(t for t in r["terms"] if t)
        lines.append(f"| {r['topic_id']} | {r['count']} | {terms} |")
    lines += ["", "## Labels", "", "| topic | count | label |", "|---|---|---|"]
    for r in label_rows:
        lines.append(f"| {r['topic_id']} | {r['count']} | {r['label']} |")
    lines += ["", "## Themes", "", "| theme | topics | count | % |", "|---|---|---|---|"]
    for r in theme_rows:
        ids = ", ".join(str(i) for i in r["topic_ids"])
        lines.append(
            f"| {r['theme']} | {ids} | {r['count']} | {r['percentage']:.2f} |"
        )
    return "\n".join(lines) + "\n"
