"""Desk-scale test bundles shipped with the package.

Each fixture is a bundle directory with an ``expected/`` folder of plain
JSON expectations, a scripted ``mock.json`` and a recorded cassette.
"""

from __future__ import annotations

import json
from pathlib import Path

from openpub.bundle import ResearchBundle, ingest_bundle
from openpub.errors import UnknownFixture

FIXTURE_ROOT = Path(__file__).resolve().parent
FIXTURES = ("delong11", "laio-missing-fig4", "empty")


def fixture_dir(name: str) -> Path:
    if name not in FIXTURES:
        raise UnknownFixture(f"unknown fixture {name!r}; known: {', '.join(FIXTURES)}")
    return FIXTURE_ROOT / name


def cassette_path(name: str) -> Path:
    return fixture_dir(name) / "cassettes" / "checkers.json"


def mock_script_path(name: str) -> Path:
    return fixture_dir(name) / "mock.json"


def load_expectations(name: str) -> dict:
    """Read ``expected/*.json`` without touching the pipeline."""
    root = fixture_dir(name)
    out = {}
    for path in sorted((root / "expected").glob("*.json")):
        out[path.stem] = json.loads(path.read_text(encoding="utf-8"))
    manifest = json.loads((root / "openpub.json").read_text(encoding="utf-8"))
    out["ground_truth"] = manifest.get("ground_truth_targets", out.get("targets", []))
    return out


def load_fixture(name: str) -> tuple[ResearchBundle, dict]:
    return ingest_bundle(fixture_dir(name)), load_expectations(name)
