from __future__ import annotations

import dataclasses
import math

import pytest

from dvl.dsl.lower import load
from dvl.explorer import (
    CorruptCounterexample, ExplorationTask, TraceStep, enumerate_pre_states, explore, replay,
    task_for_outline, validate_report,
)
from dvl.checker import check_outline
from dvl.model import ContractError, Fault, enabled, step
from dvl.dsl.parser import parse_cond
from dvl.syntax import ProgRef, TripleDecl

from conftest import fixture_text


def task(name, **kw):
    low = load(fixture_text(name))
    return task_for_outline(low.outlines[0], low, **kw), low


def reachable(t: ExplorationTask) -> set:
    """Plain DFS over configurations, independent of the explorer's BFS."""
    todo = list(enumerate_pre_states(t.triple, t.system))
    seen = {c.key() for c in todo}
    while todo:
        c = todo.pop()
        for choice in enabled(c, t.system):
            try:
                nxt = step(c, choice, t.system)
            except Fault:
                continue
            if nxt.key() not in seen:
                seen.add(nxt.key())
                todo.append(nxt)
    return seen


def product_bound(system, cells) -> int:
    """Size of the product of locations, cell domains and buffer contents."""
    locs = math.prod(len(u.locations) for u in system.units)
    cells = math.prod(len(system.domains[x]) for x in cells)
    bufs = 1
    for ch in system.channels.values():
        bufs *= sum(len(ch.domain) ** k for k in range(ch.capacity + 1))
    return locs * cells * bufs


def test_send_receive_pre_states_cover_both_sent_values():
    t, _ = task("send_receive.dvl")
    pres = list(enumerate_pre_states(t.triple, t.system))
    assert sorted(c.heap["s"] for c in pres) == [0, 1]
    assert all(c.heap["v"] == 0 for c in pres)  # initialized cell keeps its init


def test_send_receive_is_valid():
    t, _ = task("send_receive.dvl")
    v = explore(t)
    assert v.kind == "valid" and v.counterexample is None


def test_receiver_alone_deadlocks_and_replays():
    t, _ = task("receiver_only.dvl")
    v = explore(t)
    assert v.kind == "invalid"
    cex = v.counterexample
    assert cex.violation == "deadlock" and cex.trace == ()
    final = replay(cex, t.system)
    assert final.locations == ("l0",)


def test_vulnerable_contract_counterexample_replays():
    t, _ = task("mybank_vulnerable.dvl")
    v = explore(t)
    assert v.kind == "invalid" and v.counterexample.violation == "resource_invariant"
    final = replay(v.counterexample, t.system)
    assert final.heap["bal"] == -100 and final.heap["got"] == 200


def test_tampered_counterexample_is_rejected():
    t, _ = task("mybank_vulnerable.dvl")
    cex = explore(t).counterexample
    s = cex.trace[0]
    bad_digest = dataclasses.replace(
        cex, trace=(TraceStep(s.program, s.edge, "0" * 16),) + cex.trace[1:])
    with pytest.raises(CorruptCounterexample):
        replay(bad_digest, t.system)
    with pytest.raises(CorruptCounterexample):
        replay(dataclasses.replace(cex, trace=cex.trace[:-1]), t.system)
    with pytest.raises(CorruptCounterexample):
        replay(dataclasses.replace(cex, trace=(TraceStep(s.program, 99, None),)), t.system)


def test_depth_cap_reports_bound_exceeded():
    t, _ = task("mybank_fixed.dvl", max_depth=1)
    v = explore(t)
    assert v.kind == "bound_exceeded" and "depth" in v.stats["reason"]


def test_initial_state_cap_reports_bound_exceeded():
    t, _ = task("env_composition.dvl", max_initial=1)
    assert explore(t).kind == "bound_exceeded"


def test_non_positive_bounds_are_rejected():
    t, _ = task("send_receive.dvl")
    with pytest.raises(ContractError):
        ExplorationTask(t.system, t.triple, max_depth=0)


def test_fault_is_a_violation():
    low = load("program P { var b : bool\n start l0\n"
               " loc l0: when top do b := b + 1 goto l1\n loc l1 }")
    t = ExplorationTask(low.system(), TripleDecl(parse_cond("{ b |-> - }"), ProgRef("P"),
                                                 parse_cond("{ top }")))
    v = explore(t)
    assert v.kind == "invalid" and v.counterexample.violation == "fault"
    replay(v.counterexample, t.system)


def test_post_violation_is_reported():
    low = load("program P { var b : bool\n start l0\n"
               " loc l0: when top do b := 1 goto l1\n loc l1 }")
    t = ExplorationTask(low.system(), TripleDecl(parse_cond("{ b |-> - }"), ProgRef("P"),
                                                 parse_cond("{ b |-> 0 }")))
    v = explore(t)
    assert v.counterexample.violation == "post_spatial"
    replay(v.counterexample, t.system)


def test_trace_events_end_with_the_violation():
    events = []
    t, _ = task("mybank_vulnerable.dvl", on_event=events.append)
    explore(t)
    assert events[0]["type"] == "initial"
    assert events[-1]["type"] == "violation"
    assert {e["type"] for e in events} == {"initial", "step", "violation"}


@pytest.mark.parametrize("name", ["send_receive.dvl", "env_composition.dvl", "node_rules.dvl",
                                  "mybank_fixed.dvl"])
def test_state_count_matches_naive_search_and_product_bound(name):
    t, _ = task(name)
    v = explore(t)
    assert v.kind == "valid"
    naive = reachable(t)
    assert v.stats["states"] == len(naive)
    cells = next(enumerate_pre_states(t.triple, t.system)).heap
    assert len(naive) <= product_bound(t.system, cells)


@pytest.mark.parametrize("name", ["send_receive.dvl", "env_composition.dvl", "env_mutated.dvl",
                                  "receiver_only.dvl", "mybank_vulnerable.dvl",
                                  "mybank_fixed.dvl"])
def test_checker_and_explorer_never_disagree_fatally(name):
    t, low = task(name)
    agreement = validate_report(check_outline(low.outlines[0], low), t)
    assert not agreement.fatal
