"""Reader-facing notebook scaffold: two header cells, then two cells per target."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from openpub import __version__
from openpub.bundle import ResearchBundle, text_lines
from openpub.checkers import Anchor, CheckerKind, Finding
from openpub.docmodel import ReproTarget

NBFORMAT = 4
NBFORMAT_MINOR = 5
PLACEHOLDER_MARKER = "TODO(author): provide code for {target}"
_COMMENT_STARTS = ("#", "//", "%", "--", "/*", "*")

KERNELSPEC = {"display_name": "Python 3", "language": "python", "name": "python3"}


@dataclass(frozen=True)
class Cell:
    cell_type: str  # "markdown" | "code"
    source: str
    id: str
    metadata: dict = field(default_factory=dict)

    @property
    def is_placeholder(self) -> bool:
        return bool(self.metadata.get("openpub", {}).get("placeholder"))

    def to_json(self) -> dict:
        lines = self.source.splitlines(keepends=True)
        out = {"cell_type": self.cell_type, "id": self.id, "metadata": self.metadata, "source": lines}
        if self.cell_type == "code":
            out["execution_count"] = None
            out["outputs"] = []
        return out

    @classmethod
    def from_json(cls, raw: dict) -> "Cell":
        src = raw.get("source", "")
        if isinstance(src, list):
            src = "".join(src)
        return cls(raw["cell_type"], src, raw.get("id", ""), raw.get("metadata", {}))


@dataclass(frozen=True)
class TargetSection:
    target_id: str
    narrative: Cell
    code: Cell

    @property
    def placeholder(self) -> bool:
        return self.code.is_placeholder


@dataclass(frozen=True)
class NotebookScaffold:
    header_cells: tuple[Cell, Cell]
    sections: tuple[TargetSection, ...]
    metadata: dict

    @property
    def cells(self) -> list[Cell]:
        out = list(self.header_cells)
        for s in self.sections:
            out += [s.narrative, s.code]
        return out

    @property
    def target_ids(self) -> list[str]:
        return [s.target_id for s in self.sections]

    def placeholders(self) -> list[Cell]:
        return [c for c in self.cells if c.is_placeholder]


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1] or a == b


def finding_target(finding: Finding, targets: Sequence[ReproTarget]) -> str | None:
    """Id of the first target whose manuscript span or matched code the anchor touches."""
    a = finding.anchor
    if a is None:
        return None
    for t in targets:
        if a.kind == "span" and a.file == t.file and _overlaps((a.start, a.end), t.span):
            return t.id
        mc = t.matched_code
        if a.kind == "lines" and mc is not None and a.file == mc.file:
            if a.start <= mc.end_line and mc.start_line <= a.end:
                return t.id
    return None


def _bullet(f: Finding) -> str:
    return f"- **{f.severity}** ({f.checker.value}) {f.message} *Recommendation:* {f.recommendation}"


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _is_substantive(line: str) -> bool:
    s = line.strip()
    return bool(s) and not s.startswith(_COMMENT_STARTS)


def _quote_code(bundle: ResearchBundle | None, target: ReproTarget) -> list[str] | None:
    mc = target.matched_code
    if mc is None or bundle is None:
        return None
    try:
        lines = text_lines(bundle.read_text(mc.file))
    except (OSError, UnicodeDecodeError):
        return None
    return lines[mc.start_line - 1: mc.end_line]


def _header(bundle: ResearchBundle | None, targets: Sequence[ReproTarget], n_placeholders: int,
            global_findings: Sequence[Finding], n_elsewhere: int) -> tuple[Cell, Cell]:
    sources = ", ".join(f"`{p}`" for p, _ in bundle.manuscript_texts) if bundle else "the manuscript"
    md = [
        "# Reproducibility notebook",
        "",
        f"Walks through the figures and tables of {sources} in the order they appear.",
        "Each target has a description cell and a code cell. Code cells tagged as placeholders"
        " still need code from the authors.",
        "",
        f"Targets: {len(targets)}. Placeholders: {n_placeholders}.",
    ]
    if global_findings:
        md += ["", "## General findings", ""] + [_bullet(f) for f in global_findings]
    if n_elsewhere:
        md += ["", f"{n_elsewhere} further finding(s) are anchored outside the targets; see the review report."]

    setup = [
        "# Setup",
        "from pathlib import Path",
        "",
        "import matplotlib.pyplot as plt",
        "import numpy as np",
        "",
        'BUNDLE_DIR = Path(".")',
    ]
    entries = bundle.manifest.data_entries if bundle else ()
    if entries:
        setup += ["DATA = {"]
        for d in entries:
            loc = f'BUNDLE_DIR / "{d.path}"' if d.path is not None else json.dumps(d.url)
            note = f"  # {d.expected_format}" if d.expected_format else ""
            setup.append(f"    {json.dumps(d.name)}: {loc},{note}")
        setup.append("}")
    return (
        Cell("markdown", "\n".join(md), "openpub-header-0", {"openpub": {"role": "header"}}),
        Cell("code", "\n".join(setup), "openpub-header-1", {"openpub": {"role": "header"}}),
    )


def build_scaffold(targets: Sequence[ReproTarget], findings: Iterable[Finding],
                   bundle: ResearchBundle | None = None, *, clock_epoch: int = 0) -> NotebookScaffold:
    """One section per target in extraction order.

    A target without matched code gets a placeholder code cell; so does a
    matched target whose quoted region holds no code and that a code-checker
    finding points at.
    """
    targets = list(targets)
    findings = list(findings)
    by_target: dict[str, list[Finding]] = {}
    global_findings, elsewhere = [], 0
    for f in findings:
        tid = finding_target(f, targets)
        if tid is not None:
            by_target.setdefault(tid, []).append(f)
        elif f.anchor is None:
            global_findings.append(f)
        else:
            elsewhere += 1

    sections = []
    for i, t in enumerate(targets):
        own = by_target.get(t.id, [])
        quoted = _quote_code(bundle, t)
        code_flagged = any(f.checker is CheckerKind.CODE for f in own)
        empty_region = quoted is not None and not any(_is_substantive(l) for l in quoted)
        placeholder = quoted is None or (empty_region and code_flagged)

        md = [f"## {t.id}", "", f"> {_one_line(t.caption) or '(no caption)'}", "",
              f"Source: `{t.file}`, bytes {t.span[0]}-{t.span[1]}.", ""]
        if placeholder:
            md.append("The code for this target was not provided. The cell below is a placeholder"
                      " for the authors to fill in.")
        else:
            mc = t.matched_code
            md.append(f"Run the cell below, quoted from `{mc.file}` lines {mc.start_line}-{mc.end_line},"
                      " and compare the output with the published version.")
        if own:
            md += ["", "Findings:", ""] + [_bullet(f) for f in own]
        narrative = Cell("markdown", "\n".join(md), f"openpub-{i:03d}-md", {"openpub": {"target": t.id}})

        if placeholder:
            code = Cell("code", "# " + PLACEHOLDER_MARKER.format(target=t.id), f"openpub-{i:03d}-code",
                        {"openpub": {"placeholder": True, "target": t.id}})
        else:
            mc = t.matched_code
            body = [f"# Source: {mc.file}, lines {mc.start_line}-{mc.end_line}"] + quoted
            code = Cell("code", "\n".join(body), f"openpub-{i:03d}-code", {"openpub": {"target": t.id}})
        sections.append(TargetSection(t.id, narrative, code))

    n_ph = sum(s.placeholder for s in sections)
    header = _header(bundle, targets, n_ph, global_findings, elsewhere)
    metadata = {
        "kernelspec": dict(KERNELSPEC),
        "language_info": {"name": "python"},
        "openpub": {
            "bundle_digest": bundle.content_digest if bundle else "",
            "tool_version": __version__,
            "generated_at": datetime.fromtimestamp(clock_epoch, tz=timezone.utc).isoformat(),
        },
    }
    return NotebookScaffold(header, tuple(sections), metadata)


def notebook_json(scaffold: NotebookScaffold) -> dict:
    return {
        "cells": [c.to_json() for c in scaffold.cells],
        "metadata": scaffold.metadata,
        "nbformat": NBFORMAT,
        "nbformat_minor": NBFORMAT_MINOR,
    }


def dumps_notebook(scaffold: NotebookScaffold) -> str:
    return json.dumps(notebook_json(scaffold), indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_notebook(scaffold: NotebookScaffold, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    atomic_write(out_path, dumps_notebook(scaffold))
    return out_path


def validate_notebook(nb: dict) -> list[str]:
    """Structural contract problems; empty when the notebook conforms."""
    problems = []
    if set(nb) != {"cells", "metadata", "nbformat", "nbformat_minor"}:
        problems.append(f"top-level keys {sorted(nb)}")
    if nb.get("nbformat") != NBFORMAT or nb.get("nbformat_minor") != NBFORMAT_MINOR:
        problems.append("nbformat must be 4.5")
    seen = set()
    for i, cell in enumerate(nb.get("cells", [])):
        ct = cell.get("cell_type")
        if ct not in ("markdown", "code", "raw"):
            problems.append(f"cell {i}: bad cell_type {ct!r}")
        for key in ("id", "metadata", "source"):
            if key not in cell:
                problems.append(f"cell {i}: missing {key}")
        cid = cell.get("id", "")
        if not (1 <= len(cid) <= 64) or cid in seen:
            problems.append(f"cell {i}: bad or duplicate id {cid!r}")
        seen.add(cid)
        if ct == "code":
            if cell.get("outputs") != [] or "execution_count" not in cell or cell["execution_count"] is not None:
                problems.append(f"cell {i}: code cells need outputs [] and execution_count null")
        elif "outputs" in cell or "execution_count" in cell:
            problems.append(f"cell {i}: only code cells carry outputs")
    return problems


def parse_notebook(source: str | Path | dict) -> NotebookScaffold:
    """Rebuild a scaffold from notebook JSON written by :func:`emit_notebook`."""
    if isinstance(source, dict):
        nb = source
    else:
        p = Path(source)
        nb = json.loads(p.read_text(encoding="utf-8"))
    problems = validate_notebook(nb)
    if problems:
        raise ValueError("not a scaffold notebook: " + "; ".join(problems))
    cells = [Cell.from_json(c) for c in nb["cells"]]
    if len(cells) < 2 or len(cells) % 2:
        raise ValueError(f"scaffold layout needs 2 + 2n cells, got {len(cells)}")
    sections = []
    for md, code in zip(cells[2::2], cells[3::2]):
        tid = md.metadata.get("openpub", {}).get("target")
        if tid is None or code.metadata.get("openpub", {}).get("target") != tid:
            raise ValueError(f"cells {md.id}/{code.id} are not a target section")
        sections.append(TargetSection(tid, md, code))
    return NotebookScaffold((cells[0], cells[1]), tuple(sections), nb["metadata"])
