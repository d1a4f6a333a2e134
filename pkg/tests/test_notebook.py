import json

from hypothesis import given, settings, strategies as st

from openpub.bundle import ingest_bundle
from openpub.checkers import Anchor, CheckerKind, Finding, finding_id
from openpub.docmodel import CodeRef, ReproTarget, bundle_targets, extract_targets, match_targets_to_code, parse_manuscript
from openpub.fixtures import load_fixture
from openpub.notebook import (
    PLACEHOLDER_MARKER,
    build_scaffold,
    dumps_notebook,
    emit_notebook,
    finding_target,
    notebook_json,
    parse_notebook,
    validate_notebook,
)

from conftest import write_bundle
from samples import ELEVEN

LAIO, _ = load_fixture("laio-missing-fig4")
LAIO_TARGETS = match_targets_to_code(bundle_targets(LAIO), LAIO)


def placeholder_cells(nb: dict) -> list:
    return [c for c in nb["cells"] if c["metadata"].get("openpub", {}).get("placeholder") is True]


def test_unmatched_figure_gets_placeholder():
    sc = build_scaffold(LAIO_TARGETS, [], LAIO)
    (cell,) = sc.placeholders()
    assert cell.metadata == {"openpub": {"placeholder": True, "target": "Figure 4"}}
    assert cell.source == "# " + PLACEHOLDER_MARKER.format(target="Figure 4")
    narrative = next(s.narrative for s in sc.sections if s.target_id == "Figure 4")
    assert "not provided" in narrative.source


def test_matched_code_is_quoted_with_provenance():
    sc = build_scaffold(LAIO_TARGETS, [], LAIO)
    t = next(t for t in LAIO_TARGETS if t.id == "Figure 1")
    code = next(s.code for s in sc.sections if s.target_id == "Figure 1").source
    mc = t.matched_code
    assert code.startswith(f"# Source: {mc.file}, lines {mc.start_line}-{mc.end_line}\n")
    original = LAIO.read_text(mc.file).split("\n")[mc.start_line - 1: mc.end_line]
    assert code.split("\n")[1:] == original


def test_empty_scaffold_has_two_header_cells(tmp_path):
    sc = build_scaffold([], [])
    assert len(sc.cells) == 2
    path = emit_notebook(sc, tmp_path / "nb.ipynb")
    nb = json.loads(path.read_text(encoding="utf-8"))
    assert nb["nbformat"] == 4 and nb["nbformat_minor"] == 5 and len(nb["cells"]) == 2


def test_eleven_targets_give_24_cells():
    targets = extract_targets(parse_manuscript(ELEVEN, "latex", "m.tex"))
    assert len(build_scaffold(targets, []).cells) == 2 + 2 * 11 == 24


def test_single_placeholder_found_by_json_query(tmp_path):
    path = emit_notebook(build_scaffold(LAIO_TARGETS, [], LAIO), tmp_path / "nb.ipynb")
    nb = json.loads(path.read_text(encoding="utf-8"))
    assert [c["metadata"]["openpub"]["target"] for c in placeholder_cells(nb)] == ["Figure 4"]


def test_emit_twice_is_byte_identical(tmp_path):
    sc = build_scaffold(LAIO_TARGETS, [], LAIO, clock_epoch=1_700_000_000)
    a = emit_notebook(sc, tmp_path / "a.ipynb").read_bytes()
    b = emit_notebook(build_scaffold(LAIO_TARGETS, [], LAIO, clock_epoch=1_700_000_000), tmp_path / "b.ipynb").read_bytes()
    assert a == b
    assert b"\r\n" not in a and a.endswith(b"\n")
    assert json.loads(a)["metadata"]["openpub"]["generated_at"] == "2023-11-14T22:13:20+00:00"


def test_round_trip(tmp_path):
    sc = build_scaffold(LAIO_TARGETS, [], LAIO)
    path = emit_notebook(sc, tmp_path / "nb.ipynb")
    back = parse_notebook(path)
    assert back == sc
    assert dumps_notebook(back) == path.read_text(encoding="utf-8")


def test_findings_routed_to_sections_and_header():
    fig4 = next(t for t in LAIO_TARGETS if t.id == "Figure 4")
    fig1 = next(t for t in LAIO_TARGETS if t.id == "Figure 1")
    on_fig4 = Finding(finding_id("code", "fig4", Anchor(fig4.file, "span", *fig4.span)), CheckerKind.CODE,
                      "critical", Anchor(fig4.file, "span", *fig4.span), "No code for it.", "Add it.", frozenset({0}))
    in_fig1_code = Finding("documentation:x:f", CheckerKind.DOCUMENTATION, "minor",
                           Anchor(fig1.matched_code.file, "lines", fig1.matched_code.start_line,
                                  fig1.matched_code.start_line), "Undocumented.", "Doc it.", frozenset({1}))
    glob = Finding("dataset:faces:global", CheckerKind.DATASET, "major", None, "Data missing.", "Link it.",
                   frozenset({0}))
    elsewhere = Finding("documentation:y:g", CheckerKind.DOCUMENTATION, "minor",
                        Anchor("code/density_peaks.py", "lines", 23, 23), "Other.", "Fix.", frozenset({0}))
    assert finding_target(on_fig4, LAIO_TARGETS) == "Figure 4"
    assert finding_target(in_fig1_code, LAIO_TARGETS) == "Figure 1"
    assert finding_target(glob, LAIO_TARGETS) is None
    sc = build_scaffold(LAIO_TARGETS, [on_fig4, in_fig1_code, glob, elsewhere], LAIO)
    sections = {s.target_id: s.narrative.source for s in sc.sections}
    assert "No code for it." in sections["Figure 4"]
    assert "Undocumented." in sections["Figure 1"]
    header = sc.header_cells[0].source
    assert "Data missing." in header and "1 further finding" in header
    assert "No code for it." not in header


def test_no_findings_means_no_summaries():
    sc = build_scaffold(LAIO_TARGETS, [], LAIO)
    assert all("Findings:" not in s.narrative.source for s in sc.sections)
    assert "General findings" not in sc.header_cells[0].source


def test_empty_matched_region_with_code_finding_becomes_placeholder(tmp_path):
    paper = r"\begin{figure}\caption{Alpha}\end{figure}\begin{figure}\caption{Beta}\end{figure}"
    code = "# Figure 1\n# (plot omitted)\n\n# Figure 2\nplot(beta)\n"
    bundle = ingest_bundle(write_bundle(tmp_path / "b", {"p.tex": paper, "f.py": code},
                                        {"manuscripts": ["p.tex"], "code": ["f.py"]}))
    targets = match_targets_to_code(bundle_targets(bundle), bundle)
    assert all(t.matched_code is not None for t in targets)
    t1 = targets[0]
    flag = Finding(finding_id("code", "fig1", Anchor("p.tex", "span", *t1.span)), CheckerKind.CODE, "critical",
                   Anchor("p.tex", "span", *t1.span), "Empty.", "Fill.", frozenset({0}))
    # oracle: unmatched (0) + flagged matched targets whose region has no code (1)
    assert [c.metadata["openpub"]["target"] for c in build_scaffold(targets, [flag], bundle).placeholders()] == ["Figure 1"]
    assert build_scaffold(targets, [], bundle).placeholders() == []


def test_validator_catches_contract_breaks():
    nb = notebook_json(build_scaffold(LAIO_TARGETS, [], LAIO))
    assert validate_notebook(nb) == []
    broken = json.loads(json.dumps(nb))
    broken["cells"][1]["outputs"] = [{"output_type": "stream"}]
    broken["cells"][2]["id"] = broken["cells"][0]["id"]
    broken["nbformat_minor"] = 4
    problems = validate_notebook(broken)
    assert len(problems) == 3


# -------------------------------------------------------------- properties

ids = st.lists(st.tuples(st.sampled_from(["Figure", "Table"]), st.integers(1, 40)), unique=True, max_size=12)


def _targets(pairs, with_code):
    out = []
    for i, ((kind, n), has) in enumerate(zip(pairs, with_code)):
        mc = CodeRef("code/x.py", 1, 2) if has else None
        out.append(ReproTarget(f"{kind} {n}", kind.lower(), f"Caption {i} with \"quotes\"\nand a newline",
                               "m.tex", (i * 10, i * 10 + 5), mc))
    return out


@settings(max_examples=80, deadline=None)
@given(ids, st.lists(st.booleans(), min_size=12, max_size=12), st.integers(0, 2**31))
def test_scaffold_properties(pairs, with_code, epoch):
    targets = _targets(pairs, with_code)
    sc = build_scaffold(targets, [], None, clock_epoch=epoch)
    assert sc.target_ids == [t.id for t in targets]
    assert len(sc.cells) == 2 + 2 * len(targets)
    # without a bundle nothing can be quoted, so every section is a placeholder
    assert len(sc.placeholders()) == len(targets)
    nb = notebook_json(sc)
    assert validate_notebook(nb) == []
    text = dumps_notebook(sc)
    back = parse_notebook(json.loads(text))
    assert back == sc and dumps_notebook(back) == text
