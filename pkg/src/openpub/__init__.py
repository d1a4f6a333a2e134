"""Reproducibility audit pipeline for research bundles."""

__version__ = "0.1.0"

from openpub.bundle import ResearchBundle, ingest_bundle, fingerprint
from openpub.docmodel import ReproTarget, parse_manuscript, extract_targets, match_targets_to_code
from openpub.checkers import CheckerKind, Finding, PipelineConfig, consolidate, run_checker
from openpub.notebook import build_scaffold, emit_notebook, parse_notebook
from openpub.coverage import compute_coverage

__all__ = [
    "ResearchBundle",
    "ingest_bundle",
    "fingerprint",
    "ReproTarget",
    "parse_manuscript",
    "extract_targets",
    "match_targets_to_code",
    "CheckerKind",
    "Finding",
    "PipelineConfig",
    "consolidate",
    "run_checker",
    "build_scaffold",
    "emit_notebook",
    "parse_notebook",
    "compute_coverage",
]
