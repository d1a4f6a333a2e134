"""Re-record the fixture cassettes from each fixture's scripted mock.

Run after editing prompt templates, excerpting, or a fixture bundle: the
cassette keys cover the filled prompts, so any such change invalidates them.

    python scripts/record_fixture_cassettes.py [--runs 5]
"""

import argparse

from openpub.checkers import CheckerEngine, PipelineConfig
from openpub.fixtures import FIXTURES, cassette_path, fixture_dir, load_fixture, mock_script_path
from openpub.llmgate import Cassette, LLMGate, MockBackend
from openpub.pipeline import resolved_targets


def record(name: str, runs: int) -> int:
    bundle, _ = load_fixture(name)
    script = mock_script_path(name)
    backend = MockBackend.from_file(script) if script.exists() else MockBackend()
    cassette = Cassette()
    gate = LLMGate("mock", backend=backend, record=cassette)
    engine = CheckerEngine(bundle, gate, resolved_targets(bundle), PipelineConfig(runs=runs, mode="mock", workers=1))
    engine.run_all()
    cassette.save(cassette_path(name))
    return len(cassette)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("names", nargs="*", default=list(FIXTURES))
    args = ap.parse_args()
    for name in args.names:
        n = record(name, args.runs)
        print(f"{name}: {n} entries -> {cassette_path(name).relative_to(fixture_dir(name).parent)}")


if __name__ == "__main__":
    main()
