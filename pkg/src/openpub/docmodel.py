"""Manuscript parsing, target extraction and lexical target-to-code matching.

All spans are byte offsets into the UTF-8 source, so parsing runs on bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import PurePosixPath
from typing import Iterable, Sequence

from openpub.bundle import ResearchBundle, text_lines
from openpub.errors import EncodingError

Span = tuple[int, int]

KIND_NAMES = {"figure": "Figure", "table": "Table"}


@dataclass(frozen=True)
class FloatBlock:
    kind: str  # "figure" | "table"
    label: str | None
    caption: str
    ordinal: int
    file: str
    span: Span


@dataclass(frozen=True)
class StructuredDoc:
    file: str
    sections: tuple[tuple[str, Span], ...] = ()
    float_blocks: tuple[FloatBlock, ...] = ()
    citations: tuple[tuple[str, Span], ...] = ()


@dataclass(frozen=True)
class CodeRef:
    file: str
    start_line: int  # 1-based, inclusive
    end_line: int

    def to_json(self) -> dict:
        return {"file": self.file, "lines": [self.start_line, self.end_line]}


@dataclass(frozen=True)
class ReproTarget:
    id: str
    kind: str
    caption: str
    file: str
    span: Span
    matched_code: CodeRef | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "caption": self.caption, "file": self.file, "span": list(self.span)}
        if self.matched_code is not None:
            out["matched_code"] = self.matched_code.to_json()
        return out

    @classmethod
    def from_json(cls, raw: dict) -> "ReproTarget":
        mc = raw.get("matched_code")
        kind = "table" if raw["id"].startswith("Table") else "figure"
        return cls(
            id=raw["id"],
            kind=kind,
            caption=raw["caption"],
            file=raw["file"],
            span=(raw["span"][0], raw["span"][1]),
            matched_code=CodeRef(mc["file"], mc["lines"][0], mc["lines"][1]) if mc else None,
        )


def detect_format(path: str) -> str:
    suffix = PurePosixPath(path).suffix.lower()
    if suffix in (".tex", ".ltx", ".latex"):
        return "latex"
    if suffix in (".md", ".markdown"):
        return "markdown"
    return "plain"


# ---------------------------------------------------------------- LaTeX

_TEX_COMMENT = re.compile(rb"(?<!\\)%[^\n]*")
_TEX_BEGIN = re.compile(rb"\\begin\{(figure|table)(\*?)\}")
_TEX_SECTION = re.compile(rb"\\(?:section|subsection|subsubsection)\*?\s*(?:\[[^\]]*\])?\s*\{")
_TEX_CAPTION = re.compile(rb"\\caption\s*(?:\[[^\]]*\])?\s*\{")
_TEX_LABEL = re.compile(rb"\\label\s*\{([^}]*)\}")
_TEX_CITE = re.compile(
    rb"\\(?:cite|citep|citet|citealp|citeauthor|parencite|textcite|autocite)\*?"
    rb"\s*(?:\[[^\]]*\]\s*){0,2}\{([^}]*)\}"
)
_TEX_END_DOC = re.compile(rb"\\end\{document\}")


def _mask(data: bytes, pattern: re.Pattern) -> bytes:
    return pattern.sub(lambda m: b" " * len(m.group()), data)


def _balanced(data: bytes, open_idx: int) -> int:
    """Index of the brace closing the one at ``open_idx``; -1 if unbalanced."""
    depth = 0
    i = open_idx
    while i < len(data):
        c = data[i]
        if c == 0x5C:  # backslash escapes the next byte
            i += 2
            continue
        if c == 0x7B:
            depth += 1
        elif c == 0x7D:
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return -1


def _decode(b: bytes) -> str:
    return b.decode("utf-8")


def _parse_latex(data: bytes, file: str) -> StructuredDoc:
    masked = _mask(data, _TEX_COMMENT)
    end_doc = _TEX_END_DOC.search(masked)
    doc_end = end_doc.start() if end_doc else len(data)

    heads = []
    for m in _TEX_SECTION.finditer(masked):
        close = _balanced(masked, m.end() - 1)
        if close < 0:
            continue
        heads.append((m.start(), " ".join(_decode(data[m.end():close]).split())))
    sections = []
    for i, (start, title) in enumerate(heads):
        stop = heads[i + 1][0] if i + 1 < len(heads) else max(doc_end, start)
        sections.append((title, (start, stop)))

    floats = []
    counters = {"figure": 0, "table": 0}
    pos = 0
    while True:
        m = _TEX_BEGIN.search(masked, pos)
        if not m:
            break
        kind, star = m.group(1).decode(), m.group(2)
        end_re = re.compile(rb"\\end\{" + m.group(1) + re.escape(star) + rb"\}")
        e = end_re.search(masked, m.end())
        if not e:
            pos = m.end()
            continue
        body_lo, body_hi = m.end(), e.start()
        caption = ""
        cm = _TEX_CAPTION.search(masked, body_lo, body_hi)
        if cm:
            close = _balanced(masked, cm.end() - 1)
            if 0 <= close <= body_hi:
                caption = _decode(data[cm.end():close]).strip()
        lm = _TEX_LABEL.search(masked, body_lo, body_hi)
        label = _decode(data[lm.start(1):lm.end(1)]).strip() if lm else None
        counters[kind] += 1
        floats.append(FloatBlock(kind, label, caption, counters[kind], file, (m.start(), e.end())))
        pos = e.end()

    citations = []
    for m in _TEX_CITE.finditer(masked):
        inner_start = m.start(1)
        for km in re.finditer(rb"[^,\s]+", m.group(1)):
            key = _decode(km.group())
            citations.append((key, (inner_start + km.start(), inner_start + km.end())))

    return StructuredDoc(file, tuple(sections), tuple(floats), tuple(citations))


# ------------------------------------------------------------- Markdown

_MD_FENCE = re.compile(rb"^(```|~~~)[^\n]*\n.*?^\1[^\n]*$", re.M | re.S)
_MD_HEADING = re.compile(rb"^(#{1,6})[ \t]+([^\n]+?)[ \t#]*$", re.M)
_MD_IMAGE = re.compile(rb"!\[([^\]\n]*)\]\([^)\n]*\)")
_FIG_CAPTION = re.compile(rb"^[ \t*_>]*(?:Figure|Fig\.?)[ \t]*(\d+)\b", re.I)
_TAB_CAPTION = re.compile(rb"^[ \t*_>]*Table[ \t]*(\d+)\b", re.I)
_MD_CITE_GROUP = re.compile(rb"\[([^\]\n]*@[^\]\n]*)\]")
_MD_CITE_KEY = re.compile(rb"@([A-Za-z][\w:.\-]*[\w])")


def _lines_with_offsets(data: bytes) -> list[tuple[int, int, bytes]]:
    """(start, end_without_newline, content) for each line."""
    out = []
    pos = 0
    for raw in data.splitlines(keepends=True):
        content = raw.rstrip(b"\r\n")
        out.append((pos, pos + len(content), content))
        pos += len(raw)
    return out


def _parse_markdown(data: bytes, file: str) -> StructuredDoc:
    masked = _mask(data, _MD_FENCE)
    heads = [(m.start(), _decode(m.group(2)).strip()) for m in _MD_HEADING.finditer(masked)]
    sections = []
    for i, (start, title) in enumerate(heads):
        stop = heads[i + 1][0] if i + 1 < len(heads) else len(data)
        sections.append((title, (start, stop)))

    lines = _lines_with_offsets(masked)

    def next_nonblank(i: int, step: int) -> int | None:
        # at most one blank line between a float and its caption
        j = i + step
        blanks = 0
        while 0 <= j < len(lines):
            if lines[j][2].strip():
                return j
            blanks += 1
            if blanks > 1:
                return None
            j += step
        return None

    found = []  # (start, end, kind, label, caption_bytes_span)
    used_caption_lines: set[int] = set()
    for i, (lo, hi, content) in enumerate(lines):
        m = _MD_IMAGE.search(content)
        if not m:
            continue
        alt_lo, alt_hi = lo + m.start(1), lo + m.end(1)
        start, end = lo + m.start(), lo + m.end()
        cap = (alt_lo, alt_hi)
        num = _FIG_CAPTION.match(content[m.start(1):m.end(1)])
        j = next_nonblank(i, 1)
        if j is not None and j not in used_caption_lines and _FIG_CAPTION.match(lines[j][2]):
            cap = (lines[j][0], lines[j][1])
            num = _FIG_CAPTION.match(lines[j][2])
            end = lines[j][1]
            used_caption_lines.add(j)
        label = f"Figure {int(num.group(1))}" if num else None
        found.append((start, end, "figure", label, cap))

    i = 0
    while i < len(lines):
        lo, hi, content = lines[i]
        if not content.lstrip().startswith(b"|"):
            i += 1
            continue
        j = i
        while j + 1 < len(lines) and lines[j + 1][2].lstrip().startswith(b"|"):
            j += 1
        start, end = lo, lines[j][1]
        cap_line = None
        before = next_nonblank(i, -1)
        after = next_nonblank(j, 1)
        if before is not None and _TAB_CAPTION.match(lines[before][2]):
            cap_line = before
            start = lines[before][0]
        elif after is not None and _TAB_CAPTION.match(lines[after][2]):
            cap_line = after
            end = lines[after][1]
        if cap_line is not None:
            num = _TAB_CAPTION.match(lines[cap_line][2])
            cap = (lines[cap_line][0], lines[cap_line][1])
            found.append((start, end, "table", f"Table {int(num.group(1))}", cap))
        i = j + 1

    found.sort(key=lambda f: f[0])
    floats = []
    counters = {"figure": 0, "table": 0}
    for start, end, kind, label, (clo, chi) in found:
        counters[kind] += 1
        caption = _decode(data[clo:chi]).strip()
        floats.append(FloatBlock(kind, label, caption, counters[kind], file, (start, end)))

    citations = []
    for g in _MD_CITE_GROUP.finditer(masked):
        for km in _MD_CITE_KEY.finditer(g.group(1)):
            off = g.start(1)
            citations.append((_decode(km.group(1)), (off + km.start(), off + km.end())))
    return StructuredDoc(file, tuple(sections), tuple(floats), tuple(citations))


# ---------------------------------------------------------------- plain

def _parse_plain(data: bytes, file: str) -> StructuredDoc:
    lines = _lines_with_offsets(data)
    floats = []
    counters = {"figure": 0, "table": 0}
    i = 0
    while i < len(lines):
        lo, hi, content = lines[i]
        fm, tm = _FIG_CAPTION.match(content), _TAB_CAPTION.match(content)
        prev_blank = i == 0 or not lines[i - 1][2].strip()
        if (fm or tm) and prev_blank:
            j = i
            while j + 1 < len(lines) and lines[j + 1][2].strip():
                j += 1
            kind = "figure" if fm else "table"
            num = int((fm or tm).group(1))
            counters[kind] += 1
            caption = _decode(data[lo:lines[j][1]]).strip()
            floats.append(
                FloatBlock(kind, f"{KIND_NAMES[kind]} {num}", caption, counters[kind], file, (lo, lines[j][1]))
            )
            i = j + 1
            continue
        i += 1
    return StructuredDoc(file, (), tuple(floats), ())


def parse_manuscript(text: str | bytes, format: str = "latex", file: str = "") -> StructuredDoc:
    """Parse a manuscript source into sections, floats and citations.

    ``format`` is one of ``latex``, ``markdown`` or ``plain``. Constructs the
    grammar does not know are skipped.
    """
    if isinstance(text, str):
        data = text.encode("utf-8")
    else:
        data = bytes(text)
        try:
            data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError(f"{file or '<input>'} is not valid UTF-8: {exc}") from exc
    if not data:
        return StructuredDoc(file)
    if format == "latex":
        return _parse_latex(data, file)
    if format == "markdown":
        return _parse_markdown(data, file)
    if format == "plain":
        return _parse_plain(data, file)
    raise ValueError(f"unknown manuscript format {format!r}")


# -------------------------------------------------------------- targets

_LABEL_NUMBER = re.compile(r"^(?:[A-Za-z]+\.?[\s:_\-]*)?(\d+)$")


def _label_number(label: str | None) -> int | None:
    if not label:
        return None
    m = _LABEL_NUMBER.match(label.strip())
    return int(m.group(1)) if m else None


def _suffix(k: int) -> str:
    # 1 -> b, 2 -> c, ..., 25 -> z; past that, the running count
    return chr(ord("a") + k) if k < 26 else str(k + 1)


def extract_targets(doc: StructuredDoc, taken: set[str] | None = None) -> list[ReproTarget]:
    """One target per float block, in document order.

    Numeric labels give the id number, otherwise the per-kind ordinal does.
    Later duplicates get a " (b)", " (c)", ... suffix. ``taken`` carries ids
    already used by earlier manuscripts of the same bundle and is updated.
    """
    taken = set() if taken is None else taken
    out = []
    for block in doc.float_blocks:
        n = _label_number(block.label)
        base = f"{KIND_NAMES[block.kind]} {n if n is not None else block.ordinal}"
        tid = base
        k = 0
        while tid in taken:
            k += 1
            tid = f"{base} ({_suffix(k)})"
        taken.add(tid)
        out.append(ReproTarget(tid, block.kind, block.caption, block.file, block.span))
    return out


def parse_bundle(bundle: ResearchBundle) -> list[StructuredDoc]:
    return [
        parse_manuscript(text, detect_format(path), path) for path, text in bundle.manuscript_texts
    ]


def bundle_targets(bundle: ResearchBundle) -> list[ReproTarget]:
    """Targets from every manuscript in manifest order."""
    taken: set[str] = set()
    out = []
    for doc in parse_bundle(bundle):
        out.extend(extract_targets(doc, taken))
    return out


# ------------------------------------------------------------- matching

STOPWORDS = frozenset(
    """
    about above after again against also among and another any are around because been before
    being below between both but can could did does doing down during each either else etc
    every few for from further had has have having here how into its itself just like made
    make many more most much must near next not now off once only other our ours out over
    own per same shall should show shown shows since some such than that the their theirs
    them then there these they this those through thus too under until upon using very was
    were what when where which while who whom whose why will with within without would your
    yours figure figures table tables panel panels left right top bottom plot plots data
    result results value values line lines used based given respectively
    """.split()
)

_EXPLICIT_REF = re.compile(r"\b(fig(?:ure)?s?|tab(?:le)?s?)\.?[\s_\-]*(\d+)\b", re.I)
_PLOT_SITE = re.compile(
    r"\b(?:plt|ax|axs|axes|sns|px|go)\.\w+\s*\(|savefig|\.plot\s*\(|imshow\s*\(|scatter\s*\("
    r"|\bhist\s*\(|\bbar\s*\(|ggplot\s*\(|to_latex\s*\(|to_markdown\s*\(|tabulate\s*\("
    r"|\bplot\s*\(|print_table\s*\("
)
_TEX_COMMAND = re.compile(r"\\[A-Za-z]+")
_ALPHA = re.compile(r"[A-Za-z]+")

_MAX_BLOCK = 60
_SITE_WINDOW = 3


def caption_keywords(caption: str) -> set[str]:
    text = _TEX_COMMAND.sub(" ", caption)
    return {t.lower() for t in _ALPHA.findall(text) if len(t) >= 4} - STOPWORDS


def _code_tokens(lines: Sequence[str]) -> set[str]:
    out = set()
    for line in lines:
        for tok in _ALPHA.findall(line):
            if len(tok) >= 4:
                out.add(tok.lower())
    return out - STOPWORDS


def _target_ref(target_id: str) -> tuple[str, int] | None:
    m = re.fullmatch(r"(Figure|Table) (\d+)", target_id)
    if not m:
        return None
    return m.group(1).lower(), int(m.group(2))


def _paragraph(lines: Sequence[str], idx: int, stop: set[int]) -> tuple[int, int]:
    """0-based inclusive bounds of the blank-line-delimited block starting at idx."""
    end = idx
    while (
        end + 1 < len(lines)
        and lines[end + 1].strip()
        and end + 1 not in stop
        and end + 1 - idx < _MAX_BLOCK - 1
    ):
        end += 1
    return idx, end


def match_targets_to_code(
    targets: Iterable[ReproTarget], bundle: ResearchBundle
) -> list[ReproTarget]:
    """Attach ``matched_code`` where a code site refers to the target.

    Explicit "figure N"/"fig N"/"table N" mentions win; the earliest site by
    (file, line) is used. Remaining targets may match a plotting or tabulation
    call whose surrounding lines share a caption keyword. Each site serves at
    most one target.
    """
    targets = list(targets)
    files: dict[str, list[str]] = {}
    for cf in bundle.code_files:
        try:
            files[cf.path] = text_lines(bundle.read_text(cf.path))
        except (OSError, UnicodeDecodeError):
            continue

    # explicit references: (kind, number) -> [(file, line_idx)]
    explicit: dict[tuple[str, int], list[tuple[str, int]]] = {}
    hit_lines: dict[str, dict[int, set[tuple[str, int]]]] = {}
    for path in sorted(files):
        for idx, line in enumerate(files[path]):
            for m in _EXPLICIT_REF.finditer(line):
                kind = "figure" if m.group(1).lower().startswith("fig") else "table"
                ref = (kind, int(m.group(2)))
                sites = explicit.setdefault(ref, [])
                if (path, idx) not in sites:
                    sites.append((path, idx))
                hit_lines.setdefault(path, {}).setdefault(idx, set()).add(ref)

    claimed: dict[str, set[int]] = {p: set() for p in files}
    result: dict[str, CodeRef] = {}
    for t in targets:
        ref = _target_ref(t.id)
        if ref is None or ref not in explicit:
            continue
        path, idx = explicit[ref][0]
        lines = files[path]
        # a block ends where another target is mentioned
        stop = {i for i, refs in hit_lines.get(path, {}).items() if refs - {ref}}
        lo, hi = _paragraph(lines, idx, stop)
        result[t.id] = CodeRef(path, lo + 1, hi + 1)
        claimed[path].update(range(lo, hi + 1))

    for t in targets:
        if t.id in result:
            continue
        keywords = caption_keywords(t.caption)
        if not keywords:
            continue
        for path in sorted(files):
            lines = files[path]
            found = None
            for idx, line in enumerate(lines):
                if idx in claimed[path] or not _PLOT_SITE.search(line):
                    continue
                window = lines[max(0, idx - _SITE_WINDOW): idx + _SITE_WINDOW + 1]
                if keywords & _code_tokens(window):
                    found = idx
                    break
            if found is not None:
                lo = found
                while lo - 1 >= 0 and lines[lo - 1].strip() and lo - 1 not in claimed[path] and found - lo < _SITE_WINDOW:
                    lo -= 1
                hi = found
                while hi + 1 < len(lines) and lines[hi + 1].strip() and hi + 1 not in claimed[path] and hi - found < _SITE_WINDOW:
                    hi += 1
                result[t.id] = CodeRef(path, lo + 1, hi + 1)
                claimed[path].update(range(lo, hi + 1))
                break

    return [replace(t, matched_code=result.get(t.id)) for t in targets]
