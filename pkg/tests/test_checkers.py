import json
import logging

import pytest
from hypothesis import given, settings, strategies as st

from openpub.checkers import (
    Anchor,
    CheckerEngine,
    CheckerKind,
    Finding,
    PipelineConfig,
    TemplateSet,
    cap_reachable_severity,
    check_data_links,
    code_excerpt,
    consolidate,
    dump_findings,
    finding_id,
    llm_merge,
    load_findings,
    normalize_name,
    parse_json_list,
    run_checker,
    truncate,
)
from openpub.docmodel import bundle_targets
from openpub.errors import AllRunsFailed, BackendAuth, BackendError, ResponseUnparsable
from openpub.fixtures import cassette_path, load_fixture
from openpub.llmgate import Cassette, CountingTransport, LLMGate, MockBackend, PromptRequest, TransportTimeout

from strategies import as_rows, brute_force_union, run_lists

HP = CheckerKind.HYPERPARAMETER
LAIO, LAIO_EXPECT = load_fixture("laio-missing-fig4")
TARGETS = bundle_targets(LAIO)


def engine(script, runs=1, workers=1, **kw):
    backend = script if isinstance(script, MockBackend) else MockBackend(script)
    gate = LLMGate("mock", backend=backend)
    return CheckerEngine(LAIO, gate, TARGETS, PipelineConfig(runs=runs, mode="mock", workers=workers, **kw)), backend


FIVE = json.dumps([{"name": n, "context": f"{n} appears"} for n in ["d_c", "rho_min", "delta_min", "kernel", "seed"]])


def test_kinds_are_exactly_four():
    assert [k.value for k in CheckerKind] == ["hyperparameter", "dataset", "code", "documentation"]


def test_default_runs_is_five():
    assert PipelineConfig().runs == 5
    with pytest.raises(ValueError):
        PipelineConfig(runs=0)


def test_templates_registered_for_every_step():
    t = TemplateSet.load()
    for kind in CheckerKind:
        for step in ("step1", "step2"):
            text = t.get(f"{kind.value}.{step}")
            assert "{{manuscript}}" in text and "{{code}}" in text
        assert "{{candidates}}" in t.get(f"{kind.value}.step2")
    assert all(len(d) == 64 for d in t.digests().values())


# ------------------------------------------------------------------ step 1

def test_step1_five_candidates():
    eng, _ = engine({"hyperparameter.step1": FIVE})
    cands = eng.run_step1(HP, 0)
    assert [c.name for c in cands] == [d["name"] for d in json.loads(FIVE)]
    assert all(c.checker is HP for c in cands)


def test_step1_empty_list():
    eng, _ = engine({"hyperparameter.step1": "[]"})
    assert eng.run_step1(HP, 0) == []


def test_step1_prose_fails_after_one_repair():
    backend = MockBackend({"hyperparameter.step1": "I could not find anything.", "repair": "Still prose."})
    eng, _ = engine(backend)
    with pytest.raises(ResponseUnparsable):
        eng.run_step1(HP, 0)
    assert [r.template_id for r in backend.calls] == ["hyperparameter.step1", "repair"]


def test_step1_repair_can_rescue():
    eng, _ = engine({"hyperparameter.step1": "oops", "repair": '["d_c"]'})
    assert [c.name for c in eng.run_step1(HP, 0)] == ["d_c"]


def test_step1_target_anchor_resolves_to_caption_span():
    raw = json.dumps([{"name": "fig four", "anchor": {"target": "Figure 4"}}])
    eng, _ = engine({"code.step1": raw})
    (cand,) = eng.run_step1(CheckerKind.CODE, 0)
    fig4 = next(t for t in TARGETS if t.id == "Figure 4")
    assert cand.anchor == Anchor(fig4.file, "span", *fig4.span)


def test_step1_context_capped():
    eng, _ = engine({"hyperparameter.step1": json.dumps([{"name": "x", "context": "y" * 900}])})
    assert len(eng.run_step1(HP, 0)[0].context) == 500


# ------------------------------------------------------------------ step 2

def test_step2_keeps_subset_of_five():
    step2 = json.dumps([
        {"name": "d_c", "severity": "critical", "message": "no value", "recommendation": "give d_c"},
        {"name": "rho_min", "message": "no value", "recommendation": "give rho_min"},
    ])
    eng, _ = engine({"hyperparameter.step1": FIVE, "hyperparameter.step2": step2})
    cands = eng.run_step1(HP, 0)
    found, dropped = eng.run_step2(HP, cands, 0)
    # oracle: apply the subset rule by hand
    expected = {finding_id(HP, n, None) for n in ("d_c", "rho_min")}
    assert {f.id for f in found} == expected <= {c.id for c in cands}
    assert dropped == 0
    assert {f.id: f.severity for f in found} == {"hyperparameter:d_c:global": "critical",
                                                 "hyperparameter:rho_min:global": "major"}


def test_step2_empty_candidates_makes_no_call():
    eng, backend = engine({})
    assert eng.run_step2(HP, [], 0) == ([], 0)
    assert backend.calls == []


def test_step2_unknown_name_dropped(caplog):
    step2 = json.dumps([{"name": "d_c"}, {"name": "learning rate"}])
    eng, _ = engine({"hyperparameter.step1": FIVE, "hyperparameter.step2": step2})
    with caplog.at_level(logging.WARNING):
        found, dropped = eng.run_step2(HP, eng.run_step1(HP, 0), 0)
    assert [f.id for f in found] == ["hyperparameter:d_c:global"]
    assert dropped == 1
    assert "learning rate" in caplog.text


def test_recommendation_capped():
    step2 = json.dumps([{"name": "d_c", "recommendation": "word " * 200}])
    eng, _ = engine({"hyperparameter.step1": FIVE, "hyperparameter.step2": step2})
    (f,), _ = eng.run_step2(HP, eng.run_step1(HP, 0), 0)
    assert len(f.recommendation) <= 280 and f.recommendation.endswith("…")


# --------------------------------------------------------------- run_checker

def test_five_runs_from_cassette_match_hand_reading():
    gate = LLMGate("replay", cassette=Cassette.load(cassette_path("laio-missing-fig4")))
    outcomes = run_checker(HP, LAIO, PipelineConfig(runs=5), gate, TARGETS)
    got = [sorted(f.id for f in o.findings) for o in outcomes]
    dc = "hyperparameter:d_c:code/density_peaks.py#L5-L7"
    rho, delta = "hyperparameter:rho_min:global", "hyperparameter:delta_min:global"
    assert got == [sorted([dc, rho]), [dc], sorted([dc, delta]), [], [rho]]
    assert [o.dropped for o in outcomes] == [0, 0, 0, 0, 1]


def test_single_run_empty_mock():
    eng, _ = engine({})
    (o,) = eng.run_checker(HP)
    assert o.ok and o.findings == []


def test_all_runs_failing():
    def broken(req):
        raise BackendError("down")

    eng, _ = engine(MockBackend(broken), runs=3, workers=3)
    with pytest.raises(AllRunsFailed) as exc:
        eng.run_checker(HP)
    assert len(exc.value.errors) == 3


def test_partial_failure_is_recorded_not_fatal():
    def flaky(req):
        if req.run_index == 1:
            raise BackendError("blip")
        return '["d_c"]' if req.template_id.endswith("step1") else '[{"name": "d_c"}]'

    eng, _ = engine(MockBackend(flaky), runs=3)
    outcomes = eng.run_checker(HP)
    assert [o.ok for o in outcomes] == [True, False, True]
    (f,) = eng.consolidate(HP, outcomes)
    assert f.supporting_runs == {0, 2}


def test_auth_failure_propagates():
    def denied(req):
        raise BackendAuth("bad key")

    eng, _ = engine(MockBackend(denied))
    with pytest.raises(BackendAuth):
        eng.run_checker(HP)


def test_each_checker_emits_only_its_kind():
    gate = LLMGate("replay", cassette=Cassette.load(cassette_path("laio-missing-fig4")))
    eng = CheckerEngine(LAIO, gate, TARGETS, PipelineConfig())
    for kind in CheckerKind:
        outcomes = eng.run_checker(kind)
        assert all(f.checker is kind for o in outcomes for f in o.findings)
        assert all(f.supporting_runs <= set(range(5)) and f.supporting_runs for o in outcomes for f in o.findings)


names = st.lists(st.sampled_from(["alpha", "beta", "gamma", "d_c", "Seed", "n"]), max_size=6)


@settings(max_examples=60, deadline=None)
@given(step1=names, step2=names)
def test_step2_subset_property(step1, step2):
    script = {
        "hyperparameter.step1": json.dumps(step1),
        "hyperparameter.step2": json.dumps([{"name": n} for n in step2]),
    }
    eng, _ = engine(script)
    cands = eng.run_step1(HP, 0)
    found, dropped = eng.run_step2(HP, cands, 0)
    assert {f.id for f in found} <= {c.id for c in cands}
    known = {normalize_name(n) for n in step1}
    expected = sum(normalize_name(n) not in known for n in step2) if cands else 0
    assert dropped == expected


# ------------------------------------------------------------ consolidation

def F(name, runs, message="m", rec="r", severity="major", kind=HP):
    return Finding(finding_id(kind, name, None), kind, severity, None, message, rec, frozenset(runs))


def test_union_worked_example():
    a0, b0 = F("A", {0}), F("B", {0})
    b1, c1 = F("B", {1}), F("C", {1})
    a2, c4 = F("A", {2}), F("C", {4})
    out = consolidate([(0, [a0, b0]), (1, [b1, c1]), (2, [a2]), (3, []), (4, [c4])])
    assert [f.id for f in out] == ["hyperparameter:a:global", "hyperparameter:b:global", "hyperparameter:c:global"]
    assert out[0].supporting_runs == {0, 2}


def test_single_run_identity():
    a = F("A", {0}, "msg", "rec", "minor")
    assert consolidate([(0, [a])]) == [a]


def test_all_empty_runs():
    assert consolidate([(i, []) for i in range(5)]) == []


def test_merge_keeps_smallest_text_and_worst_severity():
    out = consolidate([(0, [F("x", {0}, "b msg", "z", "minor")]), (1, [F("x", {1}, "a msg", "y", "critical")])])
    assert (out[0].message, out[0].recommendation, out[0].severity) == ("a msg", "y", "critical")


def test_normalization_unifies_names():
    assert finding_id(HP, "d_c ", None) == finding_id(HP, "D_c", None) == "hyperparameter:d_c:global"
    assert normalize_name("  Batch   size! ") == "batch size"
    assert finding_id("code", "x", Anchor("p.tex", "span", 1, 9)) == "code:x:p.tex@1-9"
    assert finding_id("code", "x", Anchor("a.py", "lines", 3, 4)) == "code:x:a.py#L3-L4"


@given(run_lists())
def test_union_equals_oracle(per_run):
    assert as_rows(consolidate(per_run)) == brute_force_union(per_run)


@given(run_lists())
def test_idempotent(per_run):
    once = consolidate(per_run)
    assert consolidate([(0, once)]) == once


@given(run_lists(), st.randoms(use_true_random=False))
def test_order_insensitive(per_run, rnd):
    shuffled = list(per_run)
    rnd.shuffle(shuffled)
    assert consolidate(shuffled) == consolidate(per_run)


@given(run_lists(min_runs=1))
def test_monotone(per_run):
    before = {f.id for f in consolidate(per_run[:-1])}
    assert before <= {f.id for f in consolidate(per_run)}


def test_findings_jsonl_round_trip():
    fs = [F("a", {0, 3}), Finding("code:x:a.py#L1-L2", CheckerKind.CODE, "minor",
                                  Anchor("a.py", "lines", 1, 2), "ü", "r", frozenset({1}))]
    text = dump_findings(fs)
    assert load_findings(text) == fs
    assert set(json.loads(text.splitlines()[0])) == {
        "id", "checker", "severity", "anchor", "message", "recommendation", "supporting_runs"}


# ----------------------------------------------------------- llm-assisted

def test_llm_merge_fuses_near_duplicates():
    a, b, c = F("d_c", {0}), F("cutoff d_c", {3}), F("seed", {1})
    script = json.dumps([{"keep": a.id, "merge": [b.id, "hyperparameter:invented:global"]}])
    gate = LLMGate("mock", backend=MockBackend({"consolidate": script}))
    out = llm_merge(consolidate([(0, [a]), (1, [c]), (3, [b])]), gate, TemplateSet.load())
    assert [f.id for f in out] == [a.id, c.id]
    assert out[0].supporting_runs == {0, 3}


def test_llm_merge_falls_back_to_union():
    union = [F("a", {0}), F("b", {1})]
    gate = LLMGate("mock", backend=MockBackend({"consolidate": "no idea"}))
    assert llm_merge(union, gate, TemplateSet.load()) == union


def test_consolidate_llm_mode_needs_gate():
    with pytest.raises(ValueError):
        consolidate([(0, [F("a", {0})])], mode="llm_assisted")


# ------------------------------------------------------------- utilities

@pytest.mark.parametrize("text, expected", [
    ('["a"]', ["a"]),
    ('Sure!\n```json\n[{"name": "a"}]\n```', [{"name": "a"}]),
    ('{"candidates": ["x"]}', ["x"]),
    ('prefix [1, 2] suffix', [1, 2]),
])
def test_parse_json_list(text, expected):
    assert parse_json_list(text) == expected


def test_parse_json_list_rejects_prose():
    with pytest.raises(ResponseUnparsable):
        parse_json_list("nothing to see")


def test_truncate():
    assert truncate("a  b", 10) == "a b"
    assert truncate("x" * 300, 280) == "x" * 279 + "…"


def test_code_excerpt_budget():
    full = code_excerpt(LAIO, 100_000)
    short = code_excerpt(LAIO, 1500)
    assert "def assign" in full and "np.argsort" in full
    assert len(short) <= 1500
    assert "np.argsort(-rho)" not in short


# ------------------------------------------------------------ data links

class Http:
    def __init__(self, replies):
        self.replies = dict(replies)
        self.calls = []

    def __call__(self, method, url, *, headers, json_body, timeout):
        self.calls.append((method, timeout))
        reply = self.replies[method]
        if reply == "timeout":
            raise TransportTimeout("t")
        return reply, ""


def test_links_offline_unverified():
    status = check_data_links(LAIO.manifest.data_entries, LAIO.root_dir, offline=True)
    assert status == {"toy points": "present", "Olivetti faces": "unverified"}


def test_links_head_then_get():
    http = Http({"HEAD": 405, "GET": 200})
    status = check_data_links(LAIO.manifest.data_entries, LAIO.root_dir, offline=False, transport=http)
    assert status["Olivetti faces"] == "reachable"
    assert http.calls == [("HEAD", 10.0), ("GET", 10.0)]


def test_links_unreachable():
    http = Http({"HEAD": "timeout", "GET": 404})
    status = check_data_links(LAIO.manifest.data_entries, LAIO.root_dir, offline=False, transport=http)
    assert status["Olivetti faces"] == "unreachable"


def test_reachable_dataset_capped_at_major():
    f = F("Olivetti faces", {0}, severity="critical", kind=CheckerKind.DATASET)
    entries = LAIO.manifest.data_entries
    (capped,) = cap_reachable_severity([f], entries, {"Olivetti faces": "reachable"})
    (kept,) = cap_reachable_severity([f], entries, {"Olivetti faces": "unverified"})
    assert (capped.severity, kept.severity) == ("major", "critical")


def test_engine_makes_no_transport_calls_in_mock_mode():
    counter = CountingTransport()
    gate = LLMGate("mock", backend=MockBackend.from_file(LAIO.root_dir / "mock.json"), transport=counter)
    CheckerEngine(LAIO, gate, TARGETS, PipelineConfig(mode="mock")).run_all()
    assert counter.calls == 0
