from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from dvl.dsl.lower import LoweringError, load
from dvl.dsl.parser import parse, parse_formula, parse_syntax
from dvl.dsl.printer import formula_str, pretty_print
from dvl.syntax import (
    ActAtom, And, BinOp, Cmp, Const, Eventually, PointsTo, Prec, Star, Var, SourceModel,
)

from conftest import FIXTURES, fixture_text

ALL_FIXTURES = sorted(p.name for p in FIXTURES.glob("*.dvl"))


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_every_fixture_parses_and_lowers(name):
    low = load(fixture_text(name))
    assert low.outlines, name


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_pretty_print_is_a_fixpoint(name):
    model = parse_syntax(fixture_text(name))
    once = pretty_print(model)
    again = pretty_print(parse_syntax(once))
    assert once == again


def test_formula_precedence():
    f = parse_formula("a |-> 1 * b |-> - & x == 1")
    assert isinstance(f, And)
    assert isinstance(f.left, Star)
    assert f.right == Cmp("==", Var("x"), Const(1))


def test_points_to_wildcard_and_arithmetic():
    assert parse_formula("x |-> -") == PointsTo("x", None)
    assert parse_formula("x |-> y - 1") == PointsTo("x", BinOp("-", Var("y"), Const(1)))
    assert parse_formula("x |-> -1") == PointsTo("x", Const(-1))


def test_action_atoms_and_paths():
    f = parse_formula("c!s0@N2 -< c?v@N")
    assert f == Prec((ActAtom("send", "c", Var("s0"), "N2"), ActAtom("recv", "c", "v", "N")))
    assert parse_formula("<>#RR@N1") == Eventually(ActAtom("label", "RR", None, "N1"))


def test_negative_ranges_and_enums():
    low = load("type money = -3..3\ntype amt = {0, 5}\nchan c cap 1 dom amt\n"
               "program P { var m : money = -2\n start l0\n loc l0 }\n")
    assert low.domains["m"] == tuple(range(-3, 4))
    assert low.channels["c"].domain == (0, 5)


def _diags(text):
    out = parse(text)
    assert isinstance(out, list), "expected diagnostics"
    return out


def test_syntax_error_reports_position():
    (d,) = _diags("chan c cap 1 dom bool\nprogram P {\n  loc l0: when top do c!! goto l0\n}\n")
    assert d.code == "SYNTAX"
    assert (d.span.line, d.span.column) == (3, 25)
    assert set(d.to_json()) == {"code", "severity", "line", "column", "message"}


@pytest.mark.parametrize("text, code", [
    ("chan c cap 0 dom bool", "BAD_CAPACITY"),
    ("type t = 3..1", "BAD_DOMAIN"),
    ("program P { start l9\n loc l0 }", "UNDECLARED_LOCATION"),
    ("program P { loc l0: when top do d!1 goto l0 }", "UNDECLARED_CHANNEL"),
    ("program P { loc l0: when top do y := 1 goto l0 }", "UNDECLARED_VAR"),
    ("program P { loc l0 }\nprogram P { loc l0 }", "DUPLICATE_ID"),
    ("chan c cap 1 dom 0..3\nprogram P { var x : bool\n loc l0: when top do c?x goto l0 }",
     "DOMAIN_MISMATCH"),
])
def test_wellformedness_diagnostics(text, code):
    assert code in {d.code for d in _diags(text)}


def test_lowering_raises_with_diagnostics():
    with pytest.raises(LoweringError) as exc:
        load("chan c cap 0 dom bool")
    assert exc.value.diagnostics[0].code == "BAD_CAPACITY"


def test_lowering_builds_units_and_nodes():
    low = load(fixture_text("node_rules.dvl"))
    assert [b.node for b in low.bindings] == ["N", "N2"]
    system = low.system()
    assert system.owner == {"R": "N", "S": "N", "A": "N2"}
    r = next(u for u in low.units if u.name == "R")
    assert r.initial_locations == ("l0",)
    assert [e.target for e in r.edges] == ["l1"]


def test_parse_returns_source_model():
    assert isinstance(parse(fixture_text("send_receive.dvl")), SourceModel)


# -- round trip of random formulas ---------------------------------------------

names = st.sampled_from(["x", "y", "z"])
exprs = st.recursive(
    st.one_of(st.integers(0, 5).map(Const), names.map(Var)),
    lambda sub: st.builds(BinOp, st.sampled_from(["+", "-"]), sub, sub),
    max_leaves=4,
)
cmps = st.builds(Cmp, st.sampled_from(["==", "!=", "<", "<=", ">", ">="]), exprs, exprs)
points = st.builds(PointsTo, names, st.one_of(st.none(), exprs))
atoms = st.one_of(
    st.builds(ActAtom, st.just("send"), st.sampled_from(["c", "d"]), names.map(Var),
              st.sampled_from([None, "N", "M"])),
    st.builds(ActAtom, st.just("recv"), st.sampled_from(["c", "d"]), names,
              st.sampled_from([None, "N"])),
    st.builds(ActAtom, st.just("label"), st.sampled_from(["L", "RR"]), st.none(),
              st.sampled_from([None, "N"])),
)
paths = st.lists(atoms, min_size=2, max_size=3).map(lambda xs: Prec(tuple(xs)))
spatial = st.recursive(st.one_of(cmps, points),
                       lambda sub: st.one_of(st.builds(Star, sub, sub), st.builds(And, sub, sub)),
                       max_leaves=5)
env = st.recursive(st.one_of(atoms, paths),
                   lambda sub: st.one_of(st.builds(And, sub, sub), st.builds(Eventually, sub)),
                   max_leaves=4)


@settings(max_examples=150, deadline=None)
@given(st.one_of(spatial, env))
def test_formula_print_parse_round_trip(f):
    text = formula_str(f)
    assert formula_str(parse_formula(text)) == text
