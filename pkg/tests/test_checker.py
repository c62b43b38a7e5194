from __future__ import annotations

import pytest

from dvl.checker import (
    check_axiom, check_env_composition, check_frame, check_model,
    check_node_env_composition, check_outline, foreign_items,
)
from dvl.contract import build_fixed_model, build_vulnerable_model
from dvl.dsl.lower import load
from dvl.dsl.parser import parse_cond, parse_formula, parse_action
from dvl.syntax import ActAtom, ActionCode, Prec, ProgRef, TripleDecl, Var, conjuncts

from conftest import fixture_text

SENDRECV = fixture_text("send_receive.dvl")


def triple(pre, code, post):
    return TripleDecl(parse_cond(pre), code, parse_cond(post))


def outline_report(name, outline=None):
    low = load(fixture_text(name))
    o = low.outline(outline) if outline else low.outlines[0]
    return check_outline(o, low)


# -- whole outlines ------------------------------------------------------------------


@pytest.mark.parametrize("name, outline, verdict", [
    ("send_receive.dvl", None, "verified"),
    ("env_composition.dvl", None, "verified"),
    ("env_mutated.dvl", None, "refuted"),
    ("receiver_only.dvl", None, "refuted"),
    ("node_rules.dvl", "network", "verified"),
    ("node_rules.dvl", "network_bad_claim", "refuted"),
    ("mybank_vulnerable.dvl", None, "refuted"),
    ("mybank_fixed.dvl", None, "verified"),
    ("hashgraph_net4.dvl", None, "verified"),
])
def test_fixture_verdicts(name, outline, verdict):
    assert outline_report(name, outline).verdict == verdict


def test_refutation_names_rule_and_path():
    r = outline_report("env_mutated.dvl")
    f = r.failing_obligation
    assert f.rule == "Sequencing"
    assert f.path.startswith("root/1")
    assert "missing atom" in f.message


def test_report_json_shape():
    r = outline_report("send_receive.dvl")
    j = r.to_json()
    assert j["verdict"] == "verified" and "failing_obligation" not in j
    assert set(j["conclusion"]) == {"pre", "code", "post"}
    assert j["stats"]["obligations"] > 0


def test_check_model_covers_every_outline():
    low = load(fixture_text("node_rules.dvl"))
    assert [r.verdict for r in check_model(low)] == ["verified", "refuted"]


def test_all_failures_collects_more_than_one():
    low = load(fixture_text("mybank_vulnerable.dvl"))
    one = check_outline(low.outlines[0], low)
    many = check_outline(low.outlines[0], low, all_failures=True)
    assert one.verdict == many.verdict == "refuted"


# -- node rules: the conclusion keeps cross-node conditions only -----------------------


def test_node_env_conclusion_retains_cross_node_atom():
    r = outline_report("node_rules.dvl", "network")
    concl = r.step("root/0")  # nodeenv N
    items = set(conjuncts(concl.pre.foreign))
    s0 = ActAtom("send", "c", Var("s0"), "N2")
    assert s0 in items
    # the co-located receive c?v@N is discharged inside N
    for f in items:
        atoms = f.items if isinstance(f, Prec) else (f,)
        assert all(a.node != "N" for a in atoms if isinstance(a, ActAtom))


def test_node_composition_eliminates_everything_at_the_top():
    r = outline_report("node_rules.dvl", "network")
    assert foreign_items(r.conclusion) == []


def test_node_env_rule_at_rule_level():
    low = load(fixture_text("node_rules.dvl"))
    rp = triple("{ c!s0@N2, v |-> - }", ProgRef("R"),
                "{ c!s0@N2, (c!s0@N2 -< c?v@N) & v |-> - & v == s0 }")
    sp = triple("{ c!s0@N2 -< c?v@N, s1 |-> - }", ProgRef("S"), "{ top, c!s1@N & s1 |-> - }")
    ok = check_node_env_composition([rp, sp], None, low, "N")
    assert ok.verdict == "verified"
    kept = set(conjuncts(ok.conclusion.pre.foreign))
    assert kept == {ActAtom("send", "c", Var("s0"), "N2")}


# -- environment composition ------------------------------------------------------------


def test_env_composition_discharges_by_sibling_post():
    low = load(fixture_text("env_composition.dvl"))
    s = triple("{ s |-> - }", ProgRef("S"), "{ c!s & s |-> - }")
    r = triple("{ c!s, v |-> - }", ProgRef("R"), "{ c!s, c?v & v |-> - & v == s }")
    assert check_env_composition([s, r], None, low).verdict == "verified"


def test_env_composition_refutes_undischarged_condition():
    low = load(fixture_text("env_composition.dvl"))
    s = triple("{ s |-> - }", ProgRef("S"), "{ s |-> - }")
    r = triple("{ c!s, v |-> - }", ProgRef("R"), "{ c!s, c?v & v |-> - }")
    out = check_env_composition([s, r], None, low)
    assert out.verdict == "refuted"
    assert "c!s" in out.failure.message


def test_env_composition_refutes_overlapping_footprints():
    low = load(fixture_text("env_composition.dvl"))
    s = triple("{ s |-> - }", ProgRef("S"), "{ c!s & s |-> - }")
    r = triple("{ c!s, s |-> - * v |-> - }", ProgRef("R"), "{ c!s, c?v & s |-> - * v |-> - }")
    out = check_env_composition([s, r], None, low)
    assert out.verdict == "refuted"
    assert "both claim" in out.failure.message


# -- effect axiom and frame -------------------------------------------------------------


def test_axiom_for_assignment():
    low = load("program P { var x : 0..3 = 0\n start l0\n loc l0 }")
    good = triple("{ x |-> 1 }", ActionCode(parse_action("x := x + 1")), "{ x |-> 2 }")
    bad = triple("{ x |-> 1 }", ActionCode(parse_action("x := x + 1")), "{ x |-> 1 }")
    assert check_axiom(good, low).verdict == "verified"
    assert check_axiom(bad, low).verdict == "refuted"


def test_axiom_for_send_records_the_atom():
    low = load(SENDRECV)
    t = triple("{ s |-> - }", ProgRef("S"), "{ c!s & s |-> - }")
    assert check_axiom(t, low).verdict == "verified"
    wrong = triple("{ s |-> - }", ProgRef("S"), "{ c!1 & s |-> - }")
    assert check_axiom(wrong, low).verdict == "refuted"


def test_frame_rule_requires_untouched_frame():
    low = load("program P { var x : 0..3 = 0\n var y : 0..3 = 0\n start l0\n"
               " loc l0: when top do x := 1 goto l1\n loc l1 }")
    prem = triple("{ x |-> - }", ProgRef("P"), "{ x |-> 1 }")
    ok = check_frame(prem, parse_formula("y |-> 2"), None, low)
    assert ok.verdict == "verified"
    assert "y" in str(ok.conclusion.post)
    bad = check_frame(prem, parse_formula("x |-> 0"), None, low)
    assert bad.verdict == "refuted"


# -- contract: the verdict flips with the order of two adjacent actions -------------------


@pytest.mark.parametrize("n, a", [(100, 100), (100, 60), (50, 60), (3, 1)])
def test_contract_verdicts_are_order_sensitive(n, a):
    vul, fix = build_vulnerable_model(n, a), build_fixed_model(n, a)
    rv = check_outline(vul.outline, vul.lowered)
    rf = check_outline(fix.outline, fix.lowered)
    assert rf.verdict == "verified"
    if a > 0:
        assert rv.verdict == "refuted"
        assert rv.failing_obligation.rule == "EnvComposition"
