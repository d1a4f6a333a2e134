"""The four reproducibility checkers: two prompt steps, K runs, consolidation."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from openpub.bundle import DataEntry, ResearchBundle, text_lines
from openpub.docmodel import ReproTarget
from openpub.errors import AllRunsFailed, BackendAuth, LLMGateError, ResponseUnparsable
from openpub.llmgate import DEFAULT_TEMPERATURE, LLMGate, PromptRequest, Transport

log = logging.getLogger(__name__)


class CheckerKind(str, enum.Enum):
    HYPERPARAMETER = "hyperparameter"
    DATASET = "dataset"
    CODE = "code"
    DOCUMENTATION = "documentation"


SEVERITIES = ("critical", "major", "minor")
_SEVERITY_RANK = {s: i for i, s in enumerate(SEVERITIES)}
CONSOLIDATION_MODES = ("deterministic_union", "llm_assisted")
MAX_CONTEXT = 500
MAX_RECOMMENDATION = 280


def truncate(text: str, limit: int) -> str:
    text = " ".join(text.split())
    if len(text) <= limit:
        return text
    return text[: limit - 1].rstrip() + "…"


def normalize_name(name: str) -> str:
    text = re.sub(r"[^\w\s]", "", name.lower())
    return " ".join(text.split())


@dataclass(frozen=True, order=True)
class Anchor:
    file: str
    kind: str  # "lines" (1-based inclusive) | "span" (bytes, half-open)
    start: int
    end: int

    def key(self) -> str:
        if self.kind == "lines":
            return f"{self.file}#L{self.start}-L{self.end}"
        return f"{self.file}@{self.start}-{self.end}"

    def to_json(self) -> dict:
        return {"file": self.file, self.kind: [self.start, self.end]}

    @classmethod
    def from_json(cls, raw: Mapping | None) -> "Anchor | None":
        if raw is None:
            return None
        for kind in ("lines", "span"):
            if kind in raw:
                a, b = raw[kind]
                return cls(str(raw["file"]), kind, int(a), int(b))
        raise ValueError(f"anchor without lines or span: {raw!r}")


@dataclass(frozen=True)
class Candidate:
    checker: CheckerKind
    name: str
    context: str = ""
    anchor: Anchor | None = None

    @property
    def id(self) -> str:
        return finding_id(self.checker, self.name, self.anchor)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "context": self.context,
            "anchor": self.anchor.to_json() if self.anchor else None,
        }


def finding_id(checker: CheckerKind | str, name: str, anchor: Anchor | None) -> str:
    kind = checker.value if isinstance(checker, CheckerKind) else str(checker)
    return f"{kind.lower()}:{normalize_name(name)}:{anchor.key() if anchor else 'global'}"


@dataclass(frozen=True)
class Finding:
    id: str
    checker: CheckerKind
    severity: str
    anchor: Anchor | None
    message: str
    recommendation: str
    supporting_runs: frozenset[int]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "checker": self.checker.value,
            "severity": self.severity,
            "anchor": self.anchor.to_json() if self.anchor else None,
            "message": self.message,
            "recommendation": self.recommendation,
            "supporting_runs": sorted(self.supporting_runs),
        }

    @classmethod
    def from_json(cls, raw: Mapping) -> "Finding":
        return cls(
            id=raw["id"],
            checker=CheckerKind(raw["checker"]),
            severity=raw["severity"],
            anchor=Anchor.from_json(raw.get("anchor")),
            message=raw["message"],
            recommendation=raw["recommendation"],
            supporting_runs=frozenset(raw["supporting_runs"]),
        )


def dump_findings(findings: Iterable[Finding]) -> str:
    """JSON Lines, one finding per line."""
    return "".join(
        json.dumps(f.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for f in findings
    )


def load_findings(text: str) -> list[Finding]:
    return [Finding.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class PipelineConfig:
    runs: int = 5
    mode: str = "replay"
    consolidation: str = "deterministic_union"
    temperature: float = DEFAULT_TEMPERATURE
    excerpt_budget: int = 12_000
    workers: int = 4
    offline: bool = True

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.consolidation not in CONSOLIDATION_MODES:
            raise ValueError(f"unknown consolidation mode {self.consolidation!r}")


# ------------------------------------------------------------ templates

@dataclass(frozen=True)
class TemplateSet:
    texts: Mapping[str, str]

    def get(self, template_id: str) -> str:
        try:
            return self.texts[template_id]
        except KeyError:
            raise KeyError(f"template {template_id!r} is not registered") from None

    def digests(self) -> dict[str, str]:
        return {
            tid: hashlib.sha256(text.encode("utf-8")).hexdigest()
            for tid, text in sorted(self.texts.items())
        }

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "TemplateSet":
        """Read ``manifest.json`` (template_id -> file) from a prompt directory.

        Defaults to the templates shipped with the package.
        """
        if directory is None:
            base = resources.files("openpub") / "prompts"
        else:
            base = Path(directory)
        manifest = json.loads((base / "manifest.json").read_text(encoding="utf-8"))
        return cls({tid: (base / name).read_text(encoding="utf-8") for tid, name in manifest.items()})


def fill(template: str, **values: str) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", value)
    return out


# ----------------------------------------------------------- excerpting

_SIGNATURE = re.compile(
    r"^\s*(def |class |function |async def |fn |func |pub fn |public |private |static |#|//|%|--|/\*|\*)"
)


def manuscript_excerpt(bundle: ResearchBundle, targets: Sequence[ReproTarget], budget: int) -> str:
    head = ["Reproducible targets:"]
    head += [f"- {t.id} ({t.file}): {truncate(t.caption, 300)}" for t in targets] or ["- none found"]
    full = list(head)
    for path, text in bundle.manuscript_texts:
        full.append(f"=== {path} ===")
        full.append(text)
    out = "\n".join(full)
    if len(out) <= budget:
        return out
    # over budget: section headings and captions only
    from openpub.docmodel import detect_format, parse_manuscript

    short = list(head)
    for path, text in bundle.manuscript_texts:
        doc = parse_manuscript(text, detect_format(path), path)
        short.append(f"=== {path} (section headings) ===")
        short += [f"- {title}" for title, _ in doc.sections]
    out = "\n".join(short)
    if len(out) > budget:
        out = out[: budget - 12] + "\n[truncated]"
    return out


def _data_lines(entries: Sequence[DataEntry]) -> list[str]:
    lines = ["Data entries:"]
    for d in entries:
        fmt = f" (format: {d.expected_format})" if d.expected_format else ""
        lines.append(f"- {d.name}: {d.location}{fmt}")
    if len(lines) == 1:
        lines.append("- none declared")
    return lines


def code_excerpt(bundle: ResearchBundle, budget: int) -> str:
    files = []
    for cf in bundle.code_files:
        try:
            files.append((cf, text_lines(bundle.read_text(cf.path))))
        except (OSError, UnicodeDecodeError):
            files.append((cf, ["[binary or unreadable file]"]))

    def render(keep_line) -> str:
        parts = _data_lines(bundle.manifest.data_entries)
        for cf, lines in files:
            parts.append(f"=== {cf.path} ({cf.language}, {cf.line_count} lines) ===")
            parts += [f"{n:>4}| {line}" for n, line in enumerate(lines, 1) if keep_line(line)]
        return "\n".join(parts)

    out = render(lambda line: True)
    if len(out) > budget:
        out = render(lambda line: bool(_SIGNATURE.match(line)))
    if len(out) > budget:
        out = out[: budget - 12] + "\n[truncated]"
    return out


# -------------------------------------------------------------- parsing

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def parse_json_list(text: str) -> list:
    """Pull a JSON array out of a model response, tolerating fences and chatter."""
    attempts = [text.strip()]
    attempts += [m.group(1).strip() for m in _FENCE.finditer(text)]
    lo, hi = text.find("["), text.rfind("]")
    if 0 <= lo < hi:
        attempts.append(text[lo: hi + 1])
    for chunk in attempts:
        try:
            value = json.loads(chunk)
        except (ValueError, TypeError):
            continue
        if isinstance(value, list):
            return value
        if isinstance(value, dict):
            for key in ("items", "candidates", "findings"):
                if isinstance(value.get(key), list):
                    return value[key]
    raise ResponseUnparsable(f"no JSON array in response: {text[:120]!r}")


def _resolve_anchor(raw, targets: Mapping[str, ReproTarget]) -> Anchor | None:
    if not isinstance(raw, Mapping):
        return None
    if "target" in raw:
        t = targets.get(str(raw["target"]))
        if t is None:
            log.warning("anchor names unknown target %r; treating as global", raw["target"])
            return None
        return Anchor(t.file, "span", t.span[0], t.span[1])
    try:
        anchor = Anchor.from_json(raw)
    except (ValueError, KeyError, TypeError):
        return None
    if anchor.start < 0 or anchor.end < anchor.start:
        return None
    return anchor


# ----------------------------------------------------- dataset liveness

def check_data_links(entries: Sequence[DataEntry], root: Path, *, offline: bool = True,
                     transport: Transport | None = None, timeout: float = 10.0) -> dict[str, str]:
    """Status per data entry: present, missing, reachable, unreachable or unverified.

    URL checks use HEAD, then GET when HEAD is refused. Offline mode never
    reports a URL as missing, only as unverified.
    """
    from openpub.llmgate import TransportTimeout, requests_transport

    out = {}
    for d in entries:
        if d.path is not None:
            out[d.name] = "present" if (root / d.path).exists() else "missing"
            continue
        if offline:
            out[d.name] = "unverified"
            continue
        send = transport or requests_transport
        status = "unreachable"
        for method in ("HEAD", "GET"):
            try:
                code, _ = send(method, d.url, headers={}, json_body=None, timeout=timeout)
            except (TransportTimeout, LLMGateError):
                continue
            if 200 <= code < 400:
                status = "reachable"
                break
        out[d.name] = status
    return out


def cap_reachable_severity(findings: Iterable[Finding], entries: Sequence[DataEntry],
                           link_status: Mapping[str, str]) -> list[Finding]:
    """Dataset findings about a reachable URL are at most ``major``."""
    reachable = {normalize_name(d.name) for d in entries if link_status.get(d.name) == "reachable"}
    out = []
    for f in findings:
        name = f.id.split(":", 2)[1]
        if f.checker is CheckerKind.DATASET and f.severity == "critical" and any(
            r == name or r in name for r in reachable
        ):
            f = replace(f, severity="major")
        out.append(f)
    return out


# ------------------------------------------------------------- pipeline

@dataclass
class RunOutcome:
    run_index: int
    findings: list[Finding] | None = None
    error: str | None = None
    dropped: int = 0

    @property
    def ok(self) -> bool:
        return self.findings is not None


@dataclass
class CheckerEngine:
    """Runs checkers against one bundle through one gate."""

    bundle: ResearchBundle
    gate: LLMGate
    targets: Sequence[ReproTarget] = ()
    config: PipelineConfig = field(default_factory=PipelineConfig)
    templates: TemplateSet = field(default_factory=TemplateSet.load)
    link_status: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {t.id: t for t in self.targets}
        budget = self.config.excerpt_budget
        self._manuscript = manuscript_excerpt(self.bundle, self.targets, budget // 2)
        self._code = code_excerpt(self.bundle, budget - budget // 2)

    def _ask_list(self, template_id: str, prompt: str, run_index: int) -> list:
        req = PromptRequest(template_id, prompt, self.config.temperature, run_index)
        text = self.gate.send(req)
        try:
            return parse_json_list(text)
        except ResponseUnparsable:
            log.info("%s run %d: unparsable response, sending repair prompt", template_id, run_index)
        repair = fill(self.templates.get("repair"), response=text or "(empty)")
        text = self.gate.send(PromptRequest("repair", repair, self.config.temperature, run_index))
        return parse_json_list(text)

    def run_step1(self, kind: CheckerKind, run_index: int) -> list[Candidate]:
        tid = f"{kind.value}.step1"
        prompt = fill(self.templates.get(tid), manuscript=self._manuscript, code=self._code,
                      candidates="")
        items = self._ask_list(tid, prompt, run_index)
        out = []
        seen = set()
        for item in items:
            if isinstance(item, str):
                item = {"name": item}
            if not isinstance(item, Mapping) or not normalize_name(str(item.get("name", ""))):
                log.warning("%s run %d: skipping malformed candidate %r", tid, run_index, item)
                continue
            cand = Candidate(
                kind,
                " ".join(str(item["name"]).split()),
                truncate(str(item.get("context") or ""), MAX_CONTEXT),
                _resolve_anchor(item.get("anchor"), self._by_id),
            )
            if cand.id not in seen:
                seen.add(cand.id)
                out.append(cand)
        return out

    def run_step2(self, kind: CheckerKind, candidates: Sequence[Candidate],
                  run_index: int) -> tuple[list[Finding], int]:
        """Filter and annotate candidates. Returns (findings, dropped item count)."""
        if not candidates:
            return [], 0
        tid = f"{kind.value}.step2"
        listing = json.dumps([c.to_json() for c in candidates], indent=1, ensure_ascii=False)
        prompt = fill(self.templates.get(tid), manuscript=self._manuscript, code=self._code,
                      candidates=listing)
        items = self._ask_list(tid, prompt, run_index)
        by_name: dict[str, list[Candidate]] = {}
        for c in candidates:
            by_name.setdefault(normalize_name(c.name), []).append(c)

        findings: dict[str, Finding] = {}
        dropped = 0
        for item in items:
            if isinstance(item, str):
                item = {"name": item}
            if not isinstance(item, Mapping):
                dropped += 1
                continue
            matches = by_name.get(normalize_name(str(item.get("name", ""))), [])
            if "anchor" in item and len(matches) > 1:
                anchor = _resolve_anchor(item["anchor"], self._by_id)
                narrowed = [c for c in matches if c.anchor == anchor]
                matches = narrowed or matches
            if not matches:
                dropped += 1
                log.warning("%s run %d: %r is not a step-1 candidate; dropped",
                            tid, run_index, item.get("name"))
                continue
            severity = str(item.get("severity") or "major").lower()
            if severity not in _SEVERITY_RANK:
                severity = "major"
            for cand in matches:
                message = " ".join(str(item.get("message") or f"{kind.value} issue: {cand.name}").split())
                rec = truncate(str(item.get("recommendation") or f"Clarify {cand.name}."),
                               MAX_RECOMMENDATION)
                findings.setdefault(cand.id, Finding(
                    cand.id, kind, severity, cand.anchor, message, rec, frozenset({run_index})
                ))
        return list(findings.values()), dropped

    def run_once(self, kind: CheckerKind, run_index: int) -> RunOutcome:
        try:
            cands = self.run_step1(kind, run_index)
            found, dropped = self.run_step2(kind, cands, run_index)
        except BackendAuth:
            raise
        except (ResponseUnparsable, LLMGateError) as exc:
            log.warning("%s run %d failed: %s", kind.value, run_index, exc)
            return RunOutcome(run_index, None, f"{type(exc).__name__}: {exc}")
        return RunOutcome(run_index, found, None, dropped)

    def run_checker(self, kind: CheckerKind) -> list[RunOutcome]:
        k = self.config.runs
        workers = max(1, min(self.config.workers, k))
        if workers == 1:
            outcomes = [self.run_once(kind, r) for r in range(k)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(lambda r: self.run_once(kind, r), range(k)))
        if not any(o.ok for o in outcomes):
            raise AllRunsFailed(kind.value, [o.error or "" for o in outcomes])
        return outcomes

    def consolidate(self, kind: CheckerKind, outcomes: Sequence[RunOutcome]) -> list[Finding]:
        per_run = [(o.run_index, o.findings) for o in outcomes if o.ok]
        if self.config.consolidation == "llm_assisted":
            merged = llm_merge(consolidate(per_run), self.gate, self.templates, self.config.temperature)
        else:
            merged = consolidate(per_run)
        return cap_reachable_severity(merged, self.bundle.manifest.data_entries, self.link_status)

    def run_all(self, kinds: Sequence[CheckerKind] = tuple(CheckerKind)):
        """Run each checker and consolidate. Returns (findings, outcomes by kind)."""
        findings: list[Finding] = []
        outcomes: dict[str, list[RunOutcome]] = {}
        for kind in kinds:
            runs = self.run_checker(kind)
            outcomes[kind.value] = runs
            findings.extend(self.consolidate(kind, runs))
        findings.sort(key=lambda f: (f.checker.value, f.id))
        return findings, outcomes


def run_checker(kind: CheckerKind, bundle: ResearchBundle, config: PipelineConfig, gate: LLMGate,
                targets: Sequence[ReproTarget] = ()) -> list[RunOutcome]:
    return CheckerEngine(bundle, gate, targets, config).run_checker(kind)


# -------------------------------------------------------- consolidation

def _merge_pair(a: Finding, b: Finding) -> Finding:
    return replace(
        a,
        severity=min(a.severity, b.severity, key=_SEVERITY_RANK.__getitem__),
        message=min(a.message, b.message),
        recommendation=min(a.recommendation, b.recommendation),
        supporting_runs=a.supporting_runs | b.supporting_runs,
    )


def consolidate(per_run: Iterable[tuple[int, Iterable[Finding]]],
                mode: str = "deterministic_union", gate: LLMGate | None = None,
                templates: TemplateSet | None = None) -> list[Finding]:
    """Union of per-run findings by id, sorted by (checker, id).

    Duplicates keep the smallest message and recommendation, the most severe
    severity and the union of supporting runs.
    """
    merged: dict[str, Finding] = {}
    for _, findings in per_run:
        for f in findings:
            merged[f.id] = _merge_pair(merged[f.id], f) if f.id in merged else f
    out = sorted(merged.values(), key=lambda f: (f.checker.value, f.id))
    if mode == "llm_assisted":
        if gate is None:
            raise ValueError("llm_assisted consolidation needs a gate")
        out = llm_merge(out, gate, templates or TemplateSet.load())
    elif mode != "deterministic_union":
        raise ValueError(f"unknown consolidation mode {mode!r}")
    return out


def llm_merge(union: Sequence[Finding], gate: LLMGate, templates: TemplateSet,
              temperature: float = DEFAULT_TEMPERATURE) -> list[Finding]:
    """Ask the model to fuse near-duplicates. Only ids from ``union`` survive."""
    if len(union) < 2:
        return list(union)
    listing = json.dumps(
        [{"id": f.id, "message": f.message} for f in union], indent=1, ensure_ascii=False
    )
    prompt = fill(templates.get("consolidate"), findings=listing)
    try:
        groups = parse_json_list(gate.send(PromptRequest("consolidate", prompt, temperature, 0)))
    except (ResponseUnparsable, LLMGateError) as exc:
        log.warning("merge prompt failed (%s); keeping the plain union", exc)
        return list(union)
    by_id = {f.id: f for f in union}
    absorbed: set[str] = set()
    for group in groups:
        if not isinstance(group, Mapping):
            continue
        keep = group.get("keep")
        if keep not in by_id or keep in absorbed:
            continue
        for other in group.get("merge") or []:
            if other == keep or other not in by_id or other in absorbed:
                continue
            if by_id[other].checker != by_id[keep].checker:
                continue
            by_id[keep] = replace(
                by_id[keep], supporting_runs=by_id[keep].supporting_runs | by_id[other].supporting_runs
            )
            absorbed.add(other)
    return sorted((f for fid, f in by_id.items() if fid not in absorbed),
                  key=lambda f: (f.checker.value, f.id))
