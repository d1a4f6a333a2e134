"""Author-facing outputs: annotation sidecar, inline code comments, review report."""

from __future__ import annotations

import json
import logging
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from openpub.bundle import ResearchBundle
from openpub.checkers import MAX_RECOMMENDATION, CheckerKind, Finding, SEVERITIES, truncate
from openpub.errors import AnnotationError
from openpub.notebook import atomic_write

log = logging.getLogger(__name__)

SENTINEL = "[openpub]"
COMMENT_CAP = MAX_RECOMMENDATION

COMMENT_SYNTAX = {
    "python": "#",
    "r": "#",
    "julia": "#",
    "shell": "#",
    "ruby": "#",
    "perl": "#",
    "yaml": "#",
    "toml": "#",
    "c": "//",
    "cpp": "//",
    "java": "//",
    "javascript": "//",
    "typescript": "//",
    "go": "//",
    "rust": "//",
    "csharp": "//",
    "scala": "//",
    "kotlin": "//",
    "swift": "//",
    "latex": "%",
    "matlab": "%",
    "sql": "--",
    "haskell": "--",
    "lua": "--",
}


class AnchorInvalid(AnnotationError):
    pass


class UnknownCommentSyntax(AnnotationError):
    pass


class AlreadyAnnotated(AnnotationError):
    pass


@dataclass(frozen=True)
class Annotation:
    finding_id: str
    target_kind: str  # "manuscript" | "code"
    file: str
    span: tuple[int, int] | None  # manuscript byte span
    line: int | None  # code line, 1-based
    comment: str

    def sort_key(self):
        return (self.file, self.span[0] if self.span else self.line, self.finding_id)

    def to_json(self) -> dict:
        out = {"finding_id": self.finding_id, "file": self.file, "comment": self.comment}
        if self.span is not None:
            out["span"] = list(self.span)
        else:
            out["line"] = self.line
        return out


@dataclass(frozen=True)
class AnnotationSet:
    bundle_digest: str
    annotations: tuple[Annotation, ...]
    global_findings: tuple[str, ...] = ()  # ids shown only in the report preamble
    demoted: tuple[str, ...] = field(default=())

    def dumps(self) -> str:
        rows = [a.to_json() for a in self.annotations]
        return json.dumps(rows, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def annotation_comment(f: Finding) -> str:
    return truncate(f"{f.message} Recommendation: {f.recommendation}", COMMENT_CAP)


def _file_kind(bundle: ResearchBundle, rel: str) -> str | None:
    if rel in dict(bundle.manuscript_texts):
        return "manuscript"
    if bundle.code_file(rel) is not None:
        return "code"
    return None


def build_annotations(findings: Iterable[Finding], bundle: ResearchBundle) -> AnnotationSet:
    """Map anchored findings to annotations.

    An anchor outside its file's bounds demotes the finding to global with a
    warning instead of failing.
    """
    out, globals_, demoted = [], [], []
    sizes: dict[str, int] = {}
    for f in findings:
        a = f.anchor
        if a is None:
            globals_.append(f.id)
            continue
        try:
            kind = _file_kind(bundle, a.file)
            if kind is None:
                raise AnchorInvalid(f"{f.id}: {a.file} is not a bundle manuscript or code file")
            if a.kind == "span":
                if a.file not in sizes:
                    sizes[a.file] = len(bundle.read_bytes(a.file))
                if not (0 <= a.start <= a.end <= sizes[a.file]):
                    raise AnchorInvalid(f"{f.id}: span {a.start}-{a.end} outside {a.file} ({sizes[a.file]} bytes)")
                out.append(Annotation(f.id, kind, a.file, (a.start, a.end), None, annotation_comment(f)))
            else:
                n = bundle.code_file(a.file).line_count if kind == "code" else \
                    len(bundle.read_bytes(a.file).split(b"\n"))
                if not (1 <= a.start <= a.end <= n):
                    raise AnchorInvalid(f"{f.id}: lines {a.start}-{a.end} outside {a.file} ({n} lines)")
                if kind == "manuscript":
                    # line anchors into a manuscript become byte spans
                    data = bundle.read_bytes(a.file)
                    starts = [0] + [m.end() for m in re.finditer(rb"\n", data)]
                    lo = starts[a.start - 1]
                    hi = starts[a.end] if a.end < len(starts) else len(data)
                    out.append(Annotation(f.id, kind, a.file, (lo, hi), None, annotation_comment(f)))
                else:
                    out.append(Annotation(f.id, kind, a.file, None, a.start, annotation_comment(f)))
        except AnchorInvalid as exc:
            log.warning("demoting finding to global: %s", exc)
            globals_.append(f.id)
            demoted.append(f.id)
    out.sort(key=Annotation.sort_key)
    return AnnotationSet(bundle.content_digest, tuple(out), tuple(globals_), tuple(demoted))


# ------------------------------------------------------- inline comments

def comment_prefix(language: str) -> str:
    try:
        return COMMENT_SYNTAX[language]
    except KeyError:
        raise UnknownCommentSyntax(f"no line-comment syntax for language {language!r}") from None


def _split_keep(data: str) -> list[str]:
    # split on LF only; CR stays attached so CRLF files round-trip
    parts = data.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def inject_text(text: str, notes: dict[int, list[str]], prefix: str) -> str:
    """Insert one comment block above each annotated line (1-based)."""
    if SENTINEL in text:
        raise AlreadyAnnotated("file already carries injected comments")
    lines = _split_keep(text)
    out = []
    for n, line in enumerate(lines, 1):
        if n in notes:
            indent = re.match(r"[ \t]*", line).group()
            eol = "\r\n" if line.endswith("\r\n") else "\n"
            for note in notes[n]:
                out.append(f"{indent}{prefix} {SENTINEL} {' '.join(note.split())}{eol}")
        out.append(line)
    return "".join(out)


def strip_text(text: str, prefix: str) -> str:
    """Remove every injected comment line."""
    pat = re.compile(r"^[ \t]*" + re.escape(prefix) + " " + re.escape(SENTINEL) + " ")
    return "".join(line for line in _split_keep(text) if not pat.match(line))


@dataclass
class InjectionResult:
    written: list[str] = field(default_factory=list)
    report_only: list[str] = field(default_factory=list)  # finding ids without inline comment


def inject_code_comments(annotations: AnnotationSet, bundle: ResearchBundle,
                         out_dir: str | Path) -> InjectionResult:
    """Write annotated copies of every bundle code file under ``out_dir``."""
    out_dir = Path(out_dir).resolve()
    root = bundle.root_dir.resolve()
    if out_dir == root or root in out_dir.parents:
        raise AnnotationError(f"refusing to write inside the bundle root: {out_dir}")
    if out_dir.exists() and any(out_dir.iterdir()):
        raise AnnotationError(f"output directory is not empty: {out_dir}")

    per_file: dict[str, dict[int, list[str]]] = {}
    for a in annotations.annotations:
        if a.target_kind == "code":
            per_file.setdefault(a.file, {}).setdefault(a.line, []).append(f"{a.finding_id}: {a.comment}")

    result = InjectionResult()
    for cf in bundle.code_files:
        dest = out_dir / cf.path
        dest.parent.mkdir(parents=True, exist_ok=True)
        notes = per_file.get(cf.path)
        if not notes:
            shutil.copyfile(bundle.root_dir / cf.path, dest)
            result.written.append(cf.path)
            continue
        try:
            prefix = comment_prefix(cf.language)
            raw = bundle.read_bytes(cf.path).decode("utf-8")
            new = inject_text(raw, notes, prefix)
        except (UnknownCommentSyntax, AlreadyAnnotated, UnicodeDecodeError) as exc:
            log.warning("%s: inline comments skipped (%s); see the review report", cf.path, exc)
            shutil.copyfile(bundle.root_dir / cf.path, dest)
            result.report_only += [n.split(": ", 1)[0] for ns in notes.values() for n in ns]
        else:
            dest.write_bytes(new.encode("utf-8"))
        result.written.append(cf.path)
    return result


# ------------------------------------------------------------- report

def _excerpt(bundle: ResearchBundle, a: Annotation, limit: int = 240) -> str:
    data = bundle.read_bytes(a.file)
    if a.span is not None:
        text = data[a.span[0]: a.span[1]].decode("utf-8", errors="replace")
    else:
        text = data.decode("utf-8", errors="replace").split("\n")[a.line - 1]
    text = " ".join(text.split())
    return text if len(text) <= limit else text[: limit - 1] + "…"


def render_review_text(annotations: AnnotationSet, findings: Sequence[Finding],
                       bundle: ResearchBundle) -> str:
    by_id = {f.id: f for f in findings}
    lines = ["# Reproducibility review", "", f"Bundle digest: `{annotations.bundle_digest}`", ""]

    lines += ["## Summary", "", "| Checker | " + " | ".join(s.capitalize() for s in SEVERITIES) + " | Total |",
              "|---|" + "---:|" * (len(SEVERITIES) + 1)]
    for kind in CheckerKind:
        counts = [sum(1 for f in findings if f.checker is kind and f.severity == s) for s in SEVERITIES]
        lines.append(f"| {kind.value} | " + " | ".join(map(str, counts)) + f" | {sum(counts)} |")
    lines.append("")

    lines += ["## General findings", ""]
    if not findings:
        lines.append("No issues found.")
    elif not annotations.global_findings:
        lines.append("None; every finding is anchored below.")
    for fid in annotations.global_findings:
        f = by_id.get(fid)
        if f is None:
            continue
        lines.append(f"- `{fid}` **{f.severity}**: {annotation_comment(f)}")
    lines.append("")

    current = None
    for a in annotations.annotations:
        if a.file != current:
            current = a.file
            lines += [f"## `{a.file}`", ""]
        where = f"bytes {a.span[0]}-{a.span[1]}" if a.span else f"line {a.line}"
        sev = by_id[a.finding_id].severity if a.finding_id in by_id else "major"
        lines += [f"### {where}: `{a.finding_id}` ({sev})", "", f"> {_excerpt(bundle, a)}", "",
                  a.comment, ""]
    return "\n".join(lines).rstrip("\n") + "\n"


def render_review_report(annotations: AnnotationSet, findings: Sequence[Finding],
                         bundle: ResearchBundle, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    atomic_write(out_path, render_review_text(annotations, findings, bundle))
    return out_path


def write_sidecar(annotations: AnnotationSet, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    atomic_write(out_path, annotations.dumps())
    return out_path
