import json
import socket
from pathlib import Path

import pytest

from openpub.fixtures import cassette_path, fixture_dir, mock_script_path

# Every outbound connection attempt during the session lands here; the
# acceptance suite and the session hook both require it to stay empty.
NETWORK_ATTEMPTS: list = []

# One "PASS|FAIL <criterion>: <detail>" line per acceptance criterion.
ACCEPTANCE: list = []

_real_connect = socket.socket.connect
_real_connect_ex = socket.socket.connect_ex


def _guarded_connect(self, address):
    if self.family in (socket.AF_INET, socket.AF_INET6):
        NETWORK_ATTEMPTS.append(address)
        raise OSError(f"network disabled in tests: {address!r}")
    return _real_connect(self, address)


def _guarded_connect_ex(self, address):
    if self.family in (socket.AF_INET, socket.AF_INET6):
        NETWORK_ATTEMPTS.append(address)
        return 111
    return _real_connect_ex(self, address)


def pytest_configure(config):
    socket.socket.connect = _guarded_connect
    socket.socket.connect_ex = _guarded_connect_ex


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def pytest_sessionfinish(session, exitstatus):
    if NETWORK_ATTEMPTS:
        print(f"\nnetwork attempts during tests: {NETWORK_ATTEMPTS!r}")
        session.exitstatus = 1


def write_bundle(root: Path, files: dict, manifest: dict) -> Path:
    """Lay out a bundle directory from {relative path: text or bytes}."""
    root.mkdir(parents=True, exist_ok=True)
    for rel, content in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            p.write_bytes(content)
        else:
            p.write_bytes(content.encode("utf-8"))
    (root / "openpub.json").write_text(json.dumps(manifest), encoding="utf-8")
    return root


def tree_bytes(root: Path) -> dict:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture
def make_bundle(tmp_path):
    def _make(files, manifest=None, name="bundle"):
        manifest = manifest or {"manuscripts": [next(iter(files))]}
        return write_bundle(tmp_path / name, files, manifest)

    return _make


@pytest.fixture
def fixture_copy(tmp_path):
    """Copy a shipped fixture so tests can write beside it."""
    import shutil

    def _copy(name):
        dest = tmp_path / name
        shutil.copytree(fixture_dir(name), dest)
        return dest

    return _copy


def replay_args(name: str) -> list:
    return ["--backend", "replay", "--cassette", str(cassette_path(name))]


def mock_args(name: str) -> list:
    return ["--backend", "mock", "--mock-script", str(mock_script_path(name))]
