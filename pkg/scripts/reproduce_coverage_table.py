"""Run the full pipeline on the delong11 fixture and print its coverage table.

Uses the recorded cassette, so it needs no network or API key.

    python scripts/reproduce_coverage_table.py [--out DIR]
"""

import argparse
import tempfile
from pathlib import Path

from openpub.fixtures import cassette_path, fixture_dir
from openpub.pipeline import COVERAGE_MD, RunOptions, run_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", help="keep the run output here instead of a temp dir")
    args = ap.parse_args()

    bundle = fixture_dir("delong11")
    opts = RunOptions(
        backend="replay",
        cassette=str(cassette_path("delong11")),
        reference=str(bundle / "expected" / "reference_covered.json"),
    )
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out) if args.out else Path(tmp) / "out"
        run_pipeline(bundle, out, opts)
        print((out / COVERAGE_MD).read_text(encoding="utf-8"), end="")


if __name__ == "__main__":
    main()
