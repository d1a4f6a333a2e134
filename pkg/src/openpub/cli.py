"""Command line entry point: ``openpub {run,check,notebook,annotate,coverage}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from openpub import __version__
from openpub.bundle import ingest_bundle
from openpub.errors import AllRunsFailed, OpenpubError
from openpub import pipeline
from openpub.pipeline import RunOptions

EXIT_OK, EXIT_INPUT, EXIT_ALL_RUNS_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # exit status 2 is reserved for all-runs-failed
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bundle", required=True, metavar="DIR", help="bundle directory holding openpub.json")
    p.add_argument("--out", metavar="DIR", help="output directory (default: openpub-out/ beside the bundle)")
    p.add_argument("--clock-epoch", type=int, default=0, metavar="N",
                   help="timestamp written into outputs, seconds since the epoch")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _checking(p: argparse.ArgumentParser) -> None:
    p.add_argument("--runs", type=int, default=5, metavar="K", help="repetitions per checker (default 5)")
    p.add_argument("--backend", choices=["live", "replay", "mock"], default="replay")
    p.add_argument("--cassette", metavar="PATH", help="cassette to replay from or record into")
    p.add_argument("--record", action="store_true", help="record live/mock responses into --cassette")
    p.add_argument("--mock-script", metavar="PATH", help="JSON script for the mock backend")
    p.add_argument("--offline", action="store_true", help="do not probe dataset URLs")
    p.add_argument("--consolidation", choices=["union", "llm"], default="union")
    p.add_argument("--workers", type=int, default=4, metavar="N")
    p.add_argument("--prompts", metavar="DIR", help="prompt template directory (default: shipped templates)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="openpub", description="Audit a research bundle for reproducibility barriers.")
    parser.add_argument("--version", action="version", version=f"openpub {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="full pipeline: check, notebook, annotate, coverage")
    _common(p)
    _checking(p)
    p.add_argument("--reference", metavar="PATH", help="JSON array of target ids covered by a reference")

    p = sub.add_parser("check", help="run the four checkers and write findings.jsonl")
    _common(p)
    _checking(p)

    p = sub.add_parser("notebook", help="write the reader notebook from findings.jsonl")
    _common(p)
    p.add_argument("--no-findings", action="store_true", help="build without a findings file")

    p = sub.add_parser("annotate", help="write annotations.json, review.md and annotated/ copies")
    _common(p)

    p = sub.add_parser("coverage", help="compare the notebook against the ground-truth targets")
    _common(p)
    p.add_argument("--reference", metavar="PATH", help="JSON array of target ids covered by a reference")
    return parser


def _options(args: argparse.Namespace) -> RunOptions:
    fields = RunOptions.__dataclass_fields__
    return RunOptions(**{k: v for k, v in vars(args).items() if k in fields and v is not None})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    opts = _options(args)
    try:
        if args.command == "run":
            manifest = pipeline.run_pipeline(args.bundle, args.out, opts)
            out = Path(args.out) if args.out else pipeline.default_out_dir(args.bundle)
            print(f"wrote {len(manifest['outputs']) + 1} files to {out}")
            return EXIT_OK

        bundle = ingest_bundle(args.bundle)
        out = pipeline.check_out_dir(bundle, Path(args.out) if args.out else pipeline.default_out_dir(args.bundle))
        if args.command == "check":
            opts.validate()
            summary = pipeline.stage_check(bundle, out, opts)
            print(f"{summary['findings']} findings written to {out / pipeline.FINDINGS_FILE}")
        elif args.command == "notebook":
            path = pipeline.stage_notebook(bundle, out, opts)
            print(f"notebook written to {path}")
        elif args.command == "annotate":
            info = pipeline.stage_annotate(bundle, out, opts)
            print(f"{info['annotations']} annotations written to {out}")
        elif args.command == "coverage":
            pipeline.stage_coverage(bundle, out, opts)
            print((out / pipeline.COVERAGE_MD).read_text(encoding="utf-8"), end="")
    except AllRunsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_RUNS_FAILED
    except OpenpubError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
