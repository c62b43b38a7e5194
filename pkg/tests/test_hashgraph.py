from __future__ import annotations

import json
from functools import lru_cache

import pytest
from hypothesis import given, settings, strategies as st

from dvl.hashgraph import (
    Event, EventGraph, HashgraphError, TransactionLedger, assign_rounds, build_network_spec,
    check_acceptance, consensus, event_hash, fixture_graph, fnv1a64, round_received,
    run_exhaustive, simulate, supermajority, vote,
)

from conftest import FIXTURES


def fixture_expected():
    return json.loads((FIXTURES / "hashgraph_12.json").read_text())


# -- naive oracles over parent links ---------------------------------------------


def naive_ancestors(g: EventGraph, x: str) -> set:
    out, todo = set(), [x]
    while todo:
        h = todo.pop()
        if h not in out:
            out.add(h)
            todo.extend(g.events[h].parents())
    return out


def naive_strongly_see(g: EventGraph, x: str, y: str) -> bool:
    # creators of every event lying on some path from x down to y
    on_path = {z for z in naive_ancestors(g, x) if y in naive_ancestors(g, z)}
    return bool(on_path) and 3 * len({g.events[z].creator for z in on_path}) > 2 * g.n


def naive_rounds(g: EventGraph) -> dict:
    @lru_cache(None)
    def rnd(h):
        e = g.events[h]
        if not e.parents():
            return 1
        r = max(rnd(p) for p in e.parents())
        # strongly seeing w implies w is a strict ancestor, so the recursion is well founded
        ws = [w for w in g.order if w != h and naive_strongly_see(g, h, w)
              and is_witness(w) and rnd(w) == r]
        return r + 1 if 3 * len({g.events[w].creator for w in ws}) > 2 * g.n else r

    def is_witness(w):
        e = g.events[w]
        return e.sh is None or rnd(w) > rnd(e.sh)

    return {h: rnd(h) for h in g.order}


# -- hashing and the chain -------------------------------------------------------


def test_fnv1a_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_event_hash_ignores_transaction_order():
    assert event_hash(0, 1, ["b", "a"], None, None) == event_hash(0, 1, ["a", "b"], None, None)
    assert len(event_hash(0, 0, [], None, None)) == 16


def test_mutated_event_breaks_the_chain():
    g, names = fixture_graph()
    assert g.verify_chain()
    h = names["b1"]
    e = g.events[h]
    g.events[h] = Event(e.creator, e.ts, ("forged",), e.sh, e.oh, e.hash)
    assert not g.verify_chain()


def test_add_rejects_bad_events():
    g = EventGraph(2)
    g0 = g.create_event(0, None)
    with pytest.raises(HashgraphError):  # wrong self-parent
        g.add(Event.make(0, 5, (), None, None))
    with pytest.raises(HashgraphError):  # dangling other-parent
        g.add(Event.make(1, 0, (), None, "ffffffffffffffff"))
    with pytest.raises(HashgraphError):  # hash does not match content
        g.add(Event(1, 0, (), None, g0.hash, "0" * 16))


def test_graph_json_round_trip():
    g, _ = fixture_graph()
    again = EventGraph.from_json(json.loads(json.dumps(g.to_json())))
    assert again.order == g.order


# -- the bundled 12-event fixture --------------------------------------------------


def test_fixture_matches_the_stored_graph():
    g, _ = fixture_graph()
    stored = fixture_expected()
    assert [e["hash"] for e in stored["events"]] == g.order


def test_fixture_rounds_witnesses_and_fame():
    g, names = fixture_graph()
    exp = fixture_expected()["expected"]
    c = consensus(g)
    by_name = {h: n for n, h in names.items()}
    assert {by_name[h]: r for h, r in c.rounds.items()} == exp["rounds"]
    assert sorted(by_name[h] for h, w in c.witness.items() if w) == sorted(exp["witnesses"])
    assert c.famous == exp["famous"]
    assert sum(b.value for b in c.ballots) == exp["ballots_yes"] == len(c.ballots)
    assert not c.coin_used
    ledger = round_received(g, c, TransactionLedger())
    assert ledger.T == exp["T"]


def test_fixture_ballots_satisfy_the_vote_precondition():
    g, _ = fixture_graph()
    c = consensus(g)
    for b in c.ballots:
        assert c.witness[b.voter] and c.witness[b.candidate]
        assert b.value == g.see(b.voter, b.candidate)


def test_vote_requires_witnesses():
    g, names = fixture_graph()
    c = assign_rounds(g)
    with pytest.raises(HashgraphError):
        vote(g, c, names["a2"], names["b1"])
    with pytest.raises(HashgraphError):
        vote(g, c, names["c1"], names["a0"])
    assert vote(g, c, names["a2"], names["a0"]).value


def test_see_and_strongly_see_agree_with_naive_search_on_fixture():
    g, _ = fixture_graph()
    for x in g.order:
        anc = naive_ancestors(g, x)
        for y in g.order:
            assert g.see(x, y) == (y in anc)
            assert g.strongly_see(x, y) == naive_strongly_see(g, x, y)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10**6), st.integers(4, 24))
def test_graph_relations_agree_with_naive_search(seed, events):
    g = simulate(4, events, seed).states[0].graph
    for x in g.order:
        anc = naive_ancestors(g, x)
        for y in g.order:
            assert g.see(x, y) == (y in anc)
            assert g.strongly_see(x, y) == naive_strongly_see(g, x, y)
    assert assign_rounds(g).rounds == naive_rounds(g)


def test_supermajority_threshold():
    assert [supermajority(k, 4) for k in range(5)] == [False, False, False, True, True]
    assert supermajority(1, 1)


def test_a_lone_creator_never_advances_a_round():
    g = EventGraph(4)
    for i in range(4):
        g.create_event(i, None, (f"g{i}",))
    for k in range(10):
        g.create_event(0, None, (f"x{k}",))
    c = consensus(g)
    assert c.max_round == 1 and c.famous == {}
    ledger = round_received(g, c, TransactionLedger())
    assert ledger.T == [] and check_acceptance(g, ledger)


# -- gossip runs --------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(1, 21))
@pytest.mark.parametrize("events", [12, 48])
def test_runs_agree_on_t_and_keep_invariants(seed, events):
    run = simulate(4, events, seed)
    assert run.consistent()
    assert run.chains_ok()
    assert run.acceptance_ok()
    assert run.elections_agree()
    assert run.ballots_ok()


def test_longer_runs_accept_transactions():
    assert sum(bool(simulate(4, 48, s).ledgers[0]) for s in range(1, 21)) >= 15


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10**6), st.integers(4, 40))
def test_t_only_grows(seed, events):
    run = simulate(4, events, seed)
    for s in run.states:
        for before, after in zip(s.history, s.history[1:]):
            assert after[:len(before)] == before


def test_runs_are_deterministic():
    a = json.dumps(simulate(4, 30, 7).to_json(), sort_keys=True)
    b = json.dumps(simulate(4, 30, 7).to_json(), sort_keys=True)
    assert a == b


def test_too_few_events_is_an_error():
    with pytest.raises(HashgraphError):
        simulate(4, 3, 1)


# -- the network specification --------------------------------------------------------


def test_network_outline_has_one_nodeenv_per_node():
    low, outline = build_network_spec(4, 1)
    step = outline.proof
    assert step.rule == "nodecomp"
    assert all(p.rule == "nodeenv" for p in step.premises)
    assert len(step.premises) == 4
    assert {p.node for p in step.premises} == {"N0", "N1", "N2", "N3"}


def test_exhaustive_network_is_valid():
    run = run_exhaustive(4, 1, 200)
    assert run.report.verdict == "verified"
    assert run.verdict.kind == "valid"
    assert run.ok
