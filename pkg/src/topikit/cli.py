"""Command-line surface for the topic pipeline.

One subcommand per stage mirrors the pipeline's box-per-stage flow: ingest,
preprocess, embed, fit (reduce + cluster), represent, label, themes, report,
run (everything), saturate (interactive keyword discovery), and config
(print documented defaults). Exit codes: 0 success, 1 usage or configuration
error, 2 stage failure. Logs go to stderr; ``--log-json`` switches them to
machine-readable JSON lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .config import ConfigError, PipelineConfig, print_defaults, validate_config, validate_raw
from .corpus import KeywordSet, saturation_step
from .pipeline import StageError, run_pipeline, run_single_stage

logger = logging.getLogger("topikit")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2

STAGE_COMMANDS = (
    "ingest",
    "preprocess",
    "embed",
    "fit",
    "represent",
    "label",
    "themes",
    "report",
)


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        return json.dumps(payload, ensure_ascii=False)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _setup_logging(log_json: bool, verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if log_json:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _build_parser() -> _Parser:
    parser = _Parser(prog="topikit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="pipeline config JSON file")
        p.add_argument("--out", help="override the configured output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--workers", type=int, help="parallelism cap (1 = deterministic)")
        p.add_argument(
            "--provider",
            choices=("file", "http", "hash-test"),
            help="override the embedding provider kind",
        )
        p.add_argument(
            "--labeler",
            choices=("stub", "live"),
            help="override the labeling provider (live = http)",
        )
        p.add_argument("--log-json", action="store_true", help="JSON-lines logs")
        p.add_argument("-v", "--verbose", action="store_true")

    for name in STAGE_COMMANDS:
        common(sub.add_parser(name, help=f"run the {name} stage"))
    common(sub.add_parser("run", help="run the full pipeline"))

    saturate = sub.add_parser(
        "saturate", help="interactive keyword-saturation loop on stdin"
    )
    saturate.add_argument("--seed-keywords", nargs="*", default=[],
                          help="initial keyword phrases")
    saturate.add_argument("--keywords-file", help="existing keyword file to extend")
    saturate.add_argument("--out-file", help="where to write the final keyword set")
    saturate.add_argument("--log-json", action="store_true")
    saturate.add_argument("-v", "--verbose", action="store_true")

    config_cmd = sub.add_parser("config", help="configuration helpers")
    config_cmd.add_argument(
        "--print-defaults",
        action="store_true",
        help="print the documented default configuration and exit",
    )
    config_cmd.add_argument("--log-json", action="store_true")
    config_cmd.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    raw = config.manifest_view()
    if args.out is not None:
        raw["out_dir"] = args.out
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.provider is not None:
        raw["embedding"]["provider"] = args.provider
    if args.labeler is not None:
        raw["labeling"]["provider"] = "http" if args.labeler == "live" else "stub"
    # overrides can invalidate the config (e.g. --provider file without a
    # location), so the merged result is validated again
    return validate_raw(raw, config.base_dir)


def _cmd_saturate(args: argparse.Namespace) -> int:
    known = KeywordSet.of(args.seed_keywords)
    if args.keywords_file:
        known, _ = saturation_step(known, KeywordSet.from_file(args.keywords_file))
    print(f"known keywords ({len(known)}): {sorted(known.keywords)}", file=sys.stderr)
    print(
        "enter proposed keywords one per line; blank line ends a round; EOF stops",
        file=sys.stderr,
    )
    round_no = 0
    proposals: list[str] = []
    saturated = False
    for line in sys.stdin:
        line = line.strip()
        if line:
            proposals.append(line)
            continue
        round_no += 1
        known, saturated = saturation_step(known, KeywordSet.of(proposals))
        print(
            f"round {round_no}: {len(known)} keywords, saturated={saturated}",
            file=sys.stderr,
        )
        proposals = []
    if proposals:
        round_no += 1
        known, saturated = saturation_step(known, KeywordSet.of(proposals))
        print(
            f"round {round_no}: {len(known)} keywords, saturated={saturated}",
            file=sys.stderr,
        )
    for phrase in sorted(known.keywords):
        print(phrase)
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as fh:
            for phrase in sorted(known.keywords):
                fh.write(phrase + "\n")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    _setup_logging(getattr(args, "log_json", False), getattr(args, "verbose", False))

    if args.command == "config":
        if args.print_defaults:
            print(print_defaults())
            return EXIT_OK
        parser.parse_args(["config", "--help"])
        return EXIT_USAGE

    if args.command == "saturate":
        return _cmd_saturate(args)

    try:
        config = validate_config(args.config)
        config = _apply_overrides(config, args)
    except ConfigError as exc:
        for problem in exc.errors:
            logger.error("config: %s", problem)
        return EXIT_USAGE

    try:
        if args.command == "run":
            written = run_pipeline(config)
            for name, path in sorted(written.items()):
                logger.info("wrote %s", path)
        else:
            run_single_stage(config, args.command)
            logger.info("stage %s complete", args.command)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    except Exception as exc:  # non-stage failures still map to a stage exit
        logger.error("pipeline failure: %s", exc)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
