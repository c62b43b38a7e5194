"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary.
"""
from __future__ import annotations

import contextlib
import random
import time

import pytest

from dvl.checker import check_outline, foreign_items
from dvl.cli import main
from dvl.contract import run_contract
from dvl.dsl.lower import load
from dvl.explorer import enumerate_pre_states, explore, task_for_outline
from dvl.hashgraph import EventGraph, consensus, fixture_graph, run_exhaustive, simulate
from dvl.syntax import ActAtom, Prec, Var, conjuncts

from conftest import FIXTURES, fixture_text

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(capsys, number: int, title: str):
    started = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} "
                f"({time.perf_counter() - started:.2f}s)")
        RESULTS.append(line)
        with capsys.disabled():
            print("\n" + line)


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


# -- 1 ---------------------------------------------------------------------------------


def test_criterion_1_send_receive(capsys):
    with criterion(capsys, 1, "send/receive outline verifies and exploration is valid in < 1 s"):
        t0 = time.perf_counter()
        assert main(["check", str(FIXTURES / "send_receive.dvl")]) == 0
        low = load(fixture_text("send_receive.dvl"))
        task = task_for_outline(low.outlines[0], low)
        assert task.system.domains["s"] == (0, 1) and task.system.domains["v"] == (0, 1)
        assert {c.heap["s"] for c in enumerate_pre_states(task.triple, task.system)} == {0, 1}
        assert explore(task).kind == "valid"
        capsys.readouterr()
        assert time.perf_counter() - t0 < 1.0


# -- 2 ---------------------------------------------------------------------------------


def test_criterion_2_env_composition(capsys):
    with criterion(capsys, 2, "env composition verifies, foreign-top mutant refuted, "
                              "receiver alone blocks"):
        low = load(fixture_text("env_composition.dvl"))
        assert check_outline(low.outlines[0], low).verdict == "verified"
        mut = load(fixture_text("env_mutated.dvl"))
        assert check_outline(mut.outlines[0], mut).verdict == "refuted"
        alone = load(fixture_text("receiver_only.dvl"))
        v = explore(task_for_outline(alone.outlines[0], alone))
        assert v.kind == "invalid" and v.counterexample.violation == "deadlock"


# -- 3 ---------------------------------------------------------------------------------


def test_criterion_3_node_rules(capsys):
    with criterion(capsys, 3, "two-node example verifies; nodeenv keeps c!s0@N2 and drops "
                              "the local condition"):
        low = load(fixture_text("node_rules.dvl"))
        report = check_outline(low.outline("network"), low)
        assert report.verdict == "verified"
        concl = report.step("root/0")
        items = list(conjuncts(concl.pre.foreign))
        assert ActAtom("send", "c", Var("s0"), "N2") in items
        for f in items:
            atoms = f.items if isinstance(f, Prec) else (f,)
            assert not any(isinstance(a, ActAtom) and a.node == "N" for a in atoms)
        assert foreign_items(report.conclusion) == []


# -- 4 ---------------------------------------------------------------------------------


def test_criterion_4_hashgraph(capsys):
    with criterion(capsys, 4, "Hashgraph seeds 1..20 (4 nodes, 12 events): equal T, chain and "
                              "acceptance invariants, < 10 s each; exhaustive mode valid"):
        for events in (12, 48):  # the 48-event runs make T non-empty
            for seed in range(1, 21):
                run, dt = timed(simulate, 4, events, seed)
                assert dt < 10.0
                assert run.consistent() and run.chains_ok() and run.acceptance_ok()
        ex = run_exhaustive(4, 1, 200)
        assert ex.report.verdict == "verified" and ex.verdict.kind == "valid"


# -- 5 ---------------------------------------------------------------------------------


def _reordered(g: EventGraph, rng: random.Random) -> EventGraph:
    """The same events inserted in another topological order."""
    out, left = EventGraph(g.n), list(g.order)
    while left:
        ready = [h for h in left if all(p in out for p in g.events[h].parents())
                 and g.events[h].sh == out.last(g.events[h].creator)]
        h = rng.choice(ready)
        out.add(g.events[h])
        left.remove(h)
    return out


def test_criterion_5_election(capsys):
    with criterion(capsys, 5, "every ballot meets the see-and-witness precondition; per-node "
                              "outcomes identical"):
        g, _ = fixture_graph()
        rng = random.Random(5)
        outcomes = set()
        for node in range(4):
            local = g if node == 0 else _reordered(g, rng)
            c = consensus(local)
            assert c.ballots
            for b in c.ballots:
                assert c.witness[b.voter] and c.witness[b.candidate]
                assert b.value and local.see(b.voter, b.candidate)
            outcomes.add((tuple(sorted(c.rounds.items())), tuple(sorted(c.famous.items())),
                           tuple(sorted((b.voter, b.candidate, b.value) for b in c.ballots))))
        assert len(outcomes) == 1
        for seed in range(1, 21):
            assert simulate(4, 48, seed).elections_agree()


# -- 6 ---------------------------------------------------------------------------------


def test_criterion_6_reentrancy(capsys):
    with criterion(capsys, 6, "reentrancy n=a=100: vulnerable refuted at the composition, "
                              "replay 2a / -100, fixed verified and valid, < 5 s each"):
        vul, dt = timed(run_contract, "vulnerable", 100, 100)
        assert dt < 5.0
        assert vul.report.verdict == "refuted"
        assert vul.report.failing_obligation.rule == "EnvComposition"
        assert vul.report.failing_obligation.path == "root"
        assert vul.final["got"] == 200 and vul.final["bal"] == -100
        fix, dt = timed(run_contract, "fixed", 100, 100)
        assert dt < 5.0
        assert fix.report.verdict == "verified" and fix.verdict.kind == "valid"


# -- 7 ---------------------------------------------------------------------------------


def test_criterion_7_random_soundness(capsys):
    from randsys import sweep

    with criterion(capsys, 7, "1000+ random small systems: no verified-but-invalid case"):
        result = sweep(range(10_001, 11_101))
        assert result.cases >= 1000
        assert result.unsound == []
        assert result.verified > 0 and result.invalid > 0


# -- 8 ---------------------------------------------------------------------------------


def _run_counted(test) -> int:
    """Run a hypothesis test and return how many examples it executed."""
    inner = test.hypothesis.inner_test
    calls = 0

    def counted(*a, **kw):
        nonlocal calls
        calls += 1
        return inner(*a, **kw)

    test.hypothesis.inner_test = counted
    try:
        test()
    finally:
        test.hypothesis.inner_test = inner
    return calls


def test_criterion_8_property_suites(capsys):
    import test_assertions as ta
    import test_model as tm

    suites = [ta.test_star_commutes, ta.test_star_associates, ta.test_emp_is_the_unit_of_star,
              ta.test_entailment_agrees_with_enumeration,
              ta.test_env_entailment_agrees_with_enumeration,
              ta.test_precedence_is_transitive_and_irreflexive,
              tm.test_channel_is_fifo_and_never_exceeds_capacity]
    with criterion(capsys, 8, "property suites (star laws, entailment vs enumeration, "
                              "precedence order, FIFO/capacity): >= 100 cases each, < 30 s"):
        t0 = time.perf_counter()
        for suite in suites:
            assert _run_counted(suite) >= 100, suite.__name__
        assert time.perf_counter() - t0 < 30.0


@pytest.fixture(scope="session", autouse=True)
def _summary(request):
    yield
    if RESULTS:
        reporter = request.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_sep("=", "acceptance criteria")
            for line in sorted(RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
                reporter.write_line(line)
