"""Loading and fingerprinting research bundles described by ``openpub.json``."""

from __future__ import annotations

import glob
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable

from openpub.errors import (
    BundleIoError,
    EncodingError,
    FileMissing,
    ManifestInvalid,
    ManifestMissing,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "openpub.json"

LANGUAGES = {
    ".py": "python",
    ".r": "r",
    ".jl": "julia",
    ".sh": "shell",
    ".bash": "shell",
    ".rb": "ruby",
    ".pl": "perl",
    ".yaml": "yaml",
    ".yml": "yaml",
    ".toml": "toml",
    ".c": "c",
    ".h": "c",
    ".cc": "cpp",
    ".cpp": "cpp",
    ".hpp": "cpp",
    ".java": "java",
    ".js": "javascript",
    ".ts": "typescript",
    ".go": "go",
    ".rs": "rust",
    ".cs": "csharp",
    ".scala": "scala",
    ".kt": "kotlin",
    ".swift": "swift",
    ".m": "matlab",
    ".tex": "latex",
    ".sql": "sql",
    ".hs": "haskell",
    ".lua": "lua",
    ".ipynb": "notebook",
}

_GLOB_CHARS = set("*?[")
_MANIFEST_KEYS = {"manuscripts", "code", "data", "supplementary", "ground_truth_targets"}


def detect_language(path: str) -> str:
    return LANGUAGES.get(PurePosixPath(path).suffix.lower(), "unknown")


@dataclass(frozen=True)
class DataEntry:
    name: str
    path: str | None = None
    url: str | None = None
    expected_format: str | None = None

    @property
    def location(self) -> str:
        return self.path if self.path is not None else self.url  # type: ignore[return-value]


@dataclass(frozen=True)
class BundleManifest:
    manuscript_paths: tuple[str, ...]
    code_globs: tuple[str, ...] = ()
    data_entries: tuple[DataEntry, ...] = ()
    supplementary_paths: tuple[str, ...] = ()
    ground_truth_targets: tuple[str, ...] | None = None


@dataclass(frozen=True)
class CodeFile:
    path: str
    language: str
    line_count: int


@dataclass(frozen=True)
class ResearchBundle:
    root_dir: Path
    manifest: BundleManifest
    code_files: tuple[CodeFile, ...]
    manuscript_texts: tuple[tuple[str, str], ...]
    content_digest: str
    # every file that feeds the digest, sorted
    tracked_paths: tuple[str, ...] = field(default=(), repr=False)

    def read_bytes(self, rel: str) -> bytes:
        return (self.root_dir / rel).read_bytes()

    def read_text(self, rel: str) -> str:
        return self.read_bytes(rel).decode("utf-8")

    def code_file(self, rel: str) -> CodeFile | None:
        for cf in self.code_files:
            if cf.path == rel:
                return cf
        return None

    def manuscript_text(self, rel: str) -> str | None:
        for path, text in self.manuscript_texts:
            if path == rel:
                return text
        return None


def _check_relative(value: object, where: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ManifestInvalid(where, "expected a non-empty string")
    p = PurePosixPath(value.replace("\\", "/"))
    if p.is_absolute() or value.startswith(("/", "\\")) or (len(value) > 1 and value[1] == ":"):
        raise ManifestInvalid(where, f"path must be relative: {value!r}")
    if ".." in p.parts:
        raise ManifestInvalid(where, f"path escapes the bundle root: {value!r}")
    return str(p)


def _string_list(raw: dict, key: str, required: bool = False) -> list:
    value = raw.get(key, [] if not required else None)
    if value is None:
        raise ManifestInvalid(key, "missing required key")
    if not isinstance(value, list):
        raise ManifestInvalid(key, "expected an array")
    return value


def parse_manifest(raw: object) -> BundleManifest:
    """Validate decoded ``openpub.json`` content; errors carry the offending field path."""
    if not isinstance(raw, dict):
        raise ManifestInvalid("$", "manifest must be a JSON object")
    unknown = sorted(set(raw) - _MANIFEST_KEYS)
    if unknown:
        raise ManifestInvalid(unknown[0], "unknown key")

    manuscripts = _string_list(raw, "manuscripts", required=True)
    if not manuscripts:
        raise ManifestInvalid("manuscripts", "at least one manuscript is required")
    manuscripts = [_check_relative(v, f"manuscripts[{i}]") for i, v in enumerate(manuscripts)]
    code = [_check_relative(v, f"code[{i}]") for i, v in enumerate(_string_list(raw, "code"))]
    supp = [
        _check_relative(v, f"supplementary[{i}]")
        for i, v in enumerate(_string_list(raw, "supplementary"))
    ]

    entries = []
    seen = set()
    for i, item in enumerate(_string_list(raw, "data")):
        where = f"data[{i}]"
        if not isinstance(item, dict):
            raise ManifestInvalid(where, "expected an object")
        extra = sorted(set(item) - {"name", "path", "url", "format"})
        if extra:
            raise ManifestInvalid(f"{where}.{extra[0]}", "unknown key")
        name = item.get("name")
        if not isinstance(name, str) or not name.strip():
            raise ManifestInvalid(f"{where}.name", "expected a non-empty string")
        if name in seen:
            raise ManifestInvalid(f"{where}.name", f"duplicate data entry name {name!r}")
        seen.add(name)
        has_path, has_url = "path" in item, "url" in item
        if has_path == has_url:
            raise ManifestInvalid(where, "exactly one of 'path' or 'url' is required")
        path = _check_relative(item["path"], f"{where}.path") if has_path else None
        url = None
        if has_url:
            url = item["url"]
            if not isinstance(url, str) or not url.startswith(("http://", "https://", "ftp://")):
                raise ManifestInvalid(f"{where}.url", "expected an http(s) or ftp URL")
        fmt = item.get("format")
        if fmt is not None and not isinstance(fmt, str):
            raise ManifestInvalid(f"{where}.format", "expected a string")
        entries.append(DataEntry(name=name, path=path, url=url, expected_format=fmt))

    gt = raw.get("ground_truth_targets")
    if gt is not None:
        if not isinstance(gt, list) or not all(isinstance(t, str) and t.strip() for t in gt):
            raise ManifestInvalid("ground_truth_targets", "expected an array of non-empty strings")
        if len(set(gt)) != len(gt):
            raise ManifestInvalid("ground_truth_targets", "duplicate target label")
        gt = tuple(gt)

    return BundleManifest(
        manuscript_paths=tuple(manuscripts),
        code_globs=tuple(code),
        data_entries=tuple(entries),
        supplementary_paths=tuple(supp),
        ground_truth_targets=gt,
    )


def expand_globs(root: Path, patterns: Iterable[str]) -> list[str]:
    """Expand code globs to sorted, de-duplicated, bundle-relative file paths.

    A pattern without glob characters names a single file and must exist.
    """
    found: set[str] = set()
    for pattern in patterns:
        if not _GLOB_CHARS & set(pattern):
            if not (root / pattern).is_file():
                raise FileMissing(pattern)
            found.add(pattern)
            continue
        for hit in glob.glob(pattern, root_dir=root, recursive=True):
            rel = PurePosixPath(Path(hit).as_posix())
            if (root / rel).is_file() and rel.parts[0] != "openpub-out":
                found.add(str(rel))
    return sorted(found)


def text_lines(text: str) -> list[str]:
    """Split on LF only (so line numbers agree with line_count), dropping CRs."""
    if not text:
        return []
    parts = text.split("\n")
    if parts[-1] == "":
        parts.pop()
    return [p[:-1] if p.endswith("\r") else p for p in parts]


def _count_lines(data: bytes) -> int:
    if not data:
        return 0
    return data.count(b"\n") + (0 if data.endswith(b"\n") else 1)


def compute_digest(root: Path, paths: Iterable[str]) -> str:
    """SHA-256 over ``path NUL length NUL bytes`` records in sorted path order."""
    h = hashlib.sha256()
    for rel in sorted(set(paths)):
        try:
            data = (root / rel).read_bytes()
        except OSError as exc:
            raise BundleIoError(f"cannot read {rel}: {exc}") from exc
        h.update(rel.encode("utf-8") + b"\x00")
        h.update(str(len(data)).encode("ascii") + b"\x00")
        h.update(data)
    return h.hexdigest()


def ingest_bundle(root_dir: str | Path) -> ResearchBundle:
    root = Path(root_dir).resolve()
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ManifestMissing(f"no {MANIFEST_NAME} in {root}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestInvalid("$", f"not valid JSON: {exc}") from exc
    manifest = parse_manifest(raw)

    listed = list(manifest.manuscript_paths) + list(manifest.supplementary_paths)
    listed += [d.path for d in manifest.data_entries if d.path is not None]
    for rel in listed:
        if not (root / rel).exists():
            raise FileMissing(rel)

    manuscripts = []
    for rel in manifest.manuscript_paths:
        data = (root / rel).read_bytes()
        try:
            manuscripts.append((rel, data.decode("utf-8")))
        except UnicodeDecodeError as exc:
            raise EncodingError(f"{rel} is not valid UTF-8: {exc}") from exc

    code_files = []
    for rel in expand_globs(root, manifest.code_globs):
        data = (root / rel).read_bytes()
        code_files.append(CodeFile(rel, detect_language(rel), _count_lines(data)))

    tracked = {MANIFEST_NAME, *(cf.path for cf in code_files)}
    for rel in listed:
        if (root / rel).is_dir():
            tracked.update(
                p.relative_to(root).as_posix() for p in (root / rel).rglob("*") if p.is_file()
            )
        else:
            tracked.add(rel)
    digest = compute_digest(root, tracked)
    log.debug("ingested %s: %d code files, digest %s", root, len(code_files), digest[:12])
    return ResearchBundle(
        root_dir=root,
        manifest=manifest,
        code_files=tuple(code_files),
        manuscript_texts=tuple(manuscripts),
        content_digest=digest,
        tracked_paths=tuple(sorted(tracked)),
    )


def fingerprint(bundle: ResearchBundle) -> str:
    """Recompute the content digest from disk."""
    return compute_digest(bundle.root_dir, bundle.tracked_paths)
