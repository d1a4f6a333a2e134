"""Pipeline stages shared by the CLI subcommands.

Each stage reads the bundle plus earlier stage outputs from ``out_dir`` and
writes its own files there. ``run_pipeline`` chains all of them in a staging
directory and swaps it in only when every stage succeeded.
"""

from __future__ import annotations

import json
import logging
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

from openpub import __version__
from openpub.annotate import build_annotations, inject_code_comments, render_review_report, write_sidecar
from openpub.bundle import ResearchBundle, ingest_bundle
from openpub.checkers import (
    CheckerEngine,
    PipelineConfig,
    TemplateSet,
    check_data_links,
    dump_findings,
    load_findings,
)
from openpub.coverage import compute_coverage
from openpub.docmodel import ReproTarget, bundle_targets, match_targets_to_code
from openpub.errors import MissingStageInput, OpenpubError
from openpub.llmgate import Cassette, LiveConfig, LLMGate, MockBackend, Transport
from openpub.notebook import atomic_write, build_scaffold, emit_notebook, parse_notebook

log = logging.getLogger(__name__)

TARGETS_FILE = "targets.json"
FINDINGS_FILE = "findings.jsonl"
CHECK_FILE = "check.json"
NOTEBOOK_FILE = "reproducibility.ipynb"
SIDECAR_FILE = "annotations.json"
REPORT_FILE = "review.md"
ANNOTATED_DIR = "annotated"
COVERAGE_FILE = "coverage.json"
COVERAGE_MD = "coverage.md"
RUN_MANIFEST = "run_manifest.json"

CONSOLIDATION_FLAGS = {"union": "deterministic_union", "llm": "llm_assisted"}


@dataclass
class RunOptions:
    runs: int = 5
    backend: str = "replay"
    cassette: str | None = None
    record: bool = False
    offline: bool = False
    consolidation: str = "union"
    seed: int = 0
    clock_epoch: int = 0
    workers: int = 4
    reference: str | None = None
    mock_script: str | None = None
    no_findings: bool = False
    prompts: str | None = None

    def validate(self) -> None:
        if self.runs < 1:
            raise OpenpubError("--runs must be at least 1")
        if self.workers < 1:
            raise OpenpubError("--workers must be at least 1")
        if self.backend not in ("live", "replay", "mock"):
            raise OpenpubError(f"unknown backend {self.backend!r}")
        if self.backend == "replay" and not self.cassette:
            raise OpenpubError("--backend replay requires --cassette PATH")
        if self.record and not self.cassette:
            raise OpenpubError("--record requires --cassette PATH to write to")
        if self.record and self.backend == "replay":
            raise OpenpubError("--record cannot be combined with --backend replay")
        if self.consolidation not in CONSOLIDATION_FLAGS:
            raise OpenpubError(f"unknown consolidation {self.consolidation!r}")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            runs=self.runs,
            mode=self.backend,
            consolidation=CONSOLIDATION_FLAGS[self.consolidation],
            workers=self.workers,
            offline=self.offline or self.backend != "live",
        )


def default_out_dir(bundle_dir: str | Path) -> Path:
    bundle_dir = Path(bundle_dir).resolve()
    return bundle_dir.parent / "openpub-out"


def check_out_dir(bundle: ResearchBundle, out_dir: Path) -> Path:
    out_dir = Path(out_dir).resolve()
    if out_dir == bundle.root_dir or bundle.root_dir in out_dir.parents:
        raise OpenpubError(f"output directory {out_dir} is inside the bundle; choose a path beside it")
    return out_dir


def _write_json(path: Path, value) -> None:
    atomic_write(path, json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingStageInput(str(path.name))
    return path


def resolved_targets(bundle: ResearchBundle) -> list[ReproTarget]:
    return match_targets_to_code(bundle_targets(bundle), bundle)


def make_gate(opts: RunOptions, transport: Transport | None = None) -> tuple[LLMGate, Cassette | None]:
    recorder = None
    if opts.record:
        path = Path(opts.cassette)
        recorder = Cassette.load(path) if path.exists() else Cassette()
    if opts.backend == "replay":
        return LLMGate("replay", cassette=Cassette.load(opts.cassette), transport=transport), None
    if opts.backend == "mock":
        backend = MockBackend.from_file(opts.mock_script) if opts.mock_script else MockBackend()
        return LLMGate("mock", backend=backend, record=recorder, transport=transport), recorder
    cfg = LiveConfig.from_env(seed=opts.seed)
    return LLMGate("live", live_config=cfg, transport=transport, record=recorder), recorder


# ----------------------------------------------------------------- stages

def stage_check(bundle: ResearchBundle, out_dir: Path, opts: RunOptions,
                transport: Transport | None = None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = resolved_targets(bundle)
    config = opts.pipeline_config()
    gate, recorder = make_gate(opts, transport)
    templates = TemplateSet.load(opts.prompts)
    links = check_data_links(bundle.manifest.data_entries, bundle.root_dir,
                             offline=config.offline, transport=transport)
    engine = CheckerEngine(bundle, gate, targets, config, templates, links)
    try:
        findings, outcomes = engine.run_all()
    finally:
        if recorder is not None:
            recorder.save(opts.cassette)

    _write_json(out_dir / TARGETS_FILE, [t.to_json() for t in targets])
    atomic_write(out_dir / FINDINGS_FILE, dump_findings(findings))
    summary = {
        "templates": templates.digests(),
        "data_links": dict(sorted(links.items())),
        "runs": {
            kind: [
                {"run_index": o.run_index, "ok": o.ok, "error": o.error,
                 "findings": len(o.findings or []), "dropped": o.dropped}
                for o in runs
            ]
            for kind, runs in outcomes.items()
        },
        "findings": len(findings),
    }
    _write_json(out_dir / CHECK_FILE, summary)
    return summary


def stage_notebook(bundle: ResearchBundle, out_dir: Path, opts: RunOptions) -> Path:
    if opts.no_findings:
        findings = []
    else:
        findings = load_findings(_require(out_dir / FINDINGS_FILE).read_text(encoding="utf-8"))
    scaffold = build_scaffold(resolved_targets(bundle), findings, bundle, clock_epoch=opts.clock_epoch)
    return emit_notebook(scaffold, out_dir / NOTEBOOK_FILE)


def stage_annotate(bundle: ResearchBundle, out_dir: Path, opts: RunOptions) -> dict:
    findings = load_findings(_require(out_dir / FINDINGS_FILE).read_text(encoding="utf-8"))
    annotations = build_annotations(findings, bundle)
    write_sidecar(annotations, out_dir / SIDECAR_FILE)
    render_review_report(annotations, findings, bundle, out_dir / REPORT_FILE)
    annotated = out_dir / ANNOTATED_DIR
    if annotated.exists():
        shutil.rmtree(annotated)
    result = inject_code_comments(annotations, bundle, annotated)
    return {"annotations": len(annotations.annotations), "report_only": result.report_only,
            "demoted": list(annotations.demoted)}


def load_reference(path: str | None) -> list[str]:
    if not path:
        return []
    try:
        value = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise OpenpubError(f"cannot read reference list {path}: {exc}") from exc
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise OpenpubError(f"reference list {path} must be a JSON array of target ids")
    return value


def stage_coverage(bundle: ResearchBundle, out_dir: Path, opts: RunOptions) -> dict:
    scaffold = parse_notebook(_require(out_dir / NOTEBOOK_FILE))
    gt = bundle.manifest.ground_truth_targets
    if gt is None:
        gt = [t.id for t in bundle_targets(bundle)]
    if not gt:
        raise OpenpubError("no ground truth: the manifest lists none and no targets were extracted")
    report = compute_coverage(scaffold, gt, load_reference(opts.reference))
    atomic_write(out_dir / COVERAGE_FILE, report.dumps())
    atomic_write(out_dir / COVERAGE_MD, report.to_markdown())
    return report.to_json()


# --------------------------------------------------------------- full run

def _listing(out_dir: Path) -> list[str]:
    return sorted(p.relative_to(out_dir).as_posix() for p in out_dir.rglob("*") if p.is_file())


def run_pipeline(bundle_dir: str | Path, out_dir: str | Path | None, opts: RunOptions,
                 transport: Transport | None = None) -> dict:
    """All stages in order plus the run manifest. Partial output never survives a failure."""
    opts.validate()
    bundle = ingest_bundle(bundle_dir)
    out_dir = check_out_dir(bundle, Path(out_dir) if out_dir else default_out_dir(bundle_dir))
    if out_dir.exists() and any(out_dir.iterdir()) and not (out_dir / RUN_MANIFEST).is_file():
        raise OpenpubError(f"{out_dir} is not empty and holds no previous run; refusing to replace it")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".openpub-stage-", dir=out_dir.parent))
    staging.chmod(0o755)
    try:
        check = stage_check(bundle, staging, opts, transport)
        stage_notebook(bundle, staging, opts)
        annotate = stage_annotate(bundle, staging, opts)
        coverage = None
        if bundle.manifest.ground_truth_targets is not None:
            coverage = stage_coverage(bundle, staging, opts)
        manifest = {
            "tool_version": __version__,
            "bundle_digest": bundle.content_digest,
            "config": {
                "runs": opts.runs,
                "backend": opts.backend,
                "consolidation": CONSOLIDATION_FLAGS[opts.consolidation],
                "seed": opts.seed,
                "clock_epoch": opts.clock_epoch,
                "offline": opts.pipeline_config().offline,
            },
            "templates": check["templates"],
            "data_links": check["data_links"],
            "runs": {k: [{"run_index": r["run_index"], "ok": r["ok"]} for r in v]
                     for k, v in check["runs"].items()},
            "annotations": annotate,
            "coverage": None if coverage is None else
            {"covered": coverage["covered"], "total": coverage["total"], "counts": coverage["counts"]},
            "outputs": _listing(staging),
        }
        _write_json(staging / RUN_MANIFEST, manifest)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    staging.rename(out_dir)
    return manifest
