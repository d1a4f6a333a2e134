"""Coverage of a scaffold against a ground-truth target list."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from openpub.errors import UnknownTarget
from openpub.notebook import NotebookScaffold

STATUS = {
    (True, True): "both",
    (True, False): "ours_only",
    (False, True): "reference_only",
    (False, False): "neither",
}


@dataclass(frozen=True)
class CoverageRow:
    target_id: str
    ours: bool
    reference: bool

    @property
    def status(self) -> str:
        return STATUS[(self.ours, self.reference)]


@dataclass(frozen=True)
class CoverageReport:
    rows: tuple[CoverageRow, ...]

    @property
    def covered(self) -> int:
        return sum(r.ours for r in self.rows)

    @property
    def total(self) -> int:
        return len(self.rows)

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.covered, self.total) if self.total else Fraction(0)

    @property
    def coverage_ratio(self) -> float:
        return float(self.ratio)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in STATUS.values()}
        for r in self.rows:
            out[r.status] += 1
        return out

    def to_json(self) -> dict:
        return {
            "rows": [
                {"target": r.target_id, "ours": r.ours, "reference": r.reference, "status": r.status}
                for r in self.rows
            ],
            "covered": self.covered,
            "total": self.total,
            "ratio": self.coverage_ratio,
            "counts": self.counts(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_markdown(self, ours_label: str = "Generated notebook",
                    reference_label: str = "Reference notebooks") -> str:
        mark = {True: "yes", False: "no"}
        lines = [
            f"| Figure/Table | {ours_label} | {reference_label} | Status |",
            "|---|:---:|:---:|---|",
        ]
        for r in self.rows:
            lines.append(f"| {r.target_id} | {mark[r.ours]} | {mark[r.reference]} | {r.status} |")
        lines += ["", f"Coverage: {self.covered}/{self.total} ({self.coverage_ratio:.3f})"]
        return "\n".join(lines) + "\n"


_ID = re.compile(r"^(Figure|Table) (\d+)")


def _parse_id(tid: str) -> tuple[str, int] | None:
    m = _ID.match(tid)
    return (m.group(1), int(m.group(2))) if m else None


def appearance_order(scaffold_ids: Sequence[str], ground_truth: Iterable[str]) -> list[str]:
    """Order ground-truth ids by where they appear in the manuscript.

    Ids present in the scaffold keep scaffold order. A missing "Figure N" is
    slotted after the last scaffold figure numbered below N (or before the
    first numbered above it), so the result never depends on the order the
    ids were supplied in.
    """
    gt = set(ground_truth)
    seq = [tid for tid in scaffold_ids if tid in gt]
    missing = sorted(gt - set(seq), key=lambda t: (_parse_id(t) is None, _parse_id(t) or ("", 0), t))
    for tid in missing:
        parsed = _parse_id(tid)
        if parsed is None:
            seq.append(tid)
            continue
        kind, n = parsed
        pos = None
        for i, other in enumerate(seq):
            po = _parse_id(other)
            if po and po[0] == kind and po[1] < n:
                pos = i + 1
        if pos is None:
            for i, other in enumerate(seq):
                po = _parse_id(other)
                if po and po[0] == kind and po[1] > n:
                    pos = i
                    break
        seq.insert(len(seq) if pos is None else pos, tid)
    return seq


def compute_coverage(scaffold: NotebookScaffold, ground_truth: Sequence[str],
                     reference_covered: Iterable[str] = ()) -> CoverageReport:
    """Three-way status per ground-truth target.

    A target counts as ours when the scaffold has a section for it, whether
    that section quotes code or is a placeholder.
    """
    ground_truth = list(ground_truth)
    if not ground_truth:
        raise ValueError("ground truth must not be empty")
    gt = set(ground_truth)
    ref = set(reference_covered)
    unknown = sorted(ref - gt)
    if unknown:
        raise UnknownTarget(f"reference ids outside the ground truth: {', '.join(unknown)}")
    ours = set(scaffold.target_ids)
    rows = tuple(
        CoverageRow(tid, tid in ours, tid in ref)
        for tid in appearance_order(scaffold.target_ids, gt)
    )
    return CoverageReport(rows)
