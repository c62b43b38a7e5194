from __future__ import annotations

from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from dvl.dsl.lower import load
from dvl.model import (
    ActionHistory, CompositionError, ContractError, Fault, OccurredAction, enabled,
    make_configuration, status, step,
)
from dvl.syntax import Skip

from conftest import fixture_text


def _system(text, programs=None):
    low = load(text)
    return low, low.system(programs)


def _start(system, heap=None, store=None):
    return make_configuration(system, [u.initial_locations[0] for u in system.units],
                              store=store, heap=heap)


def _fire(config, system, prog, index=0):
    for p, e in enabled(config, system):
        if p == prog and e.index == index:
            return step(config, (p, e), system)
    raise AssertionError(f"{prog} edge {index} not enabled")


CHANNEL = """
chan c cap {cap} dom 0..2
program S {{
  var v : 0..2 = 0
  start l0
  loc l0: when top do c!v goto l0
          when v < 2 do v := v + 1 goto l0
}}
program R {{
  var x : 0..2 = 0
  start l0
  loc l0: when top do c?x goto l0
}}
"""


def test_send_receive_moves_value_through_buffer():
    _, sys_ = _system(CHANNEL.format(cap=1))
    c = _start(sys_, heap={"v": 0, "x": 0})
    c = _fire(c, sys_, "S", 1)
    c = _fire(c, sys_, "S", 0)
    assert c.buffers["c"] == (1,)
    c = _fire(c, sys_, "R", 0)
    assert c.heap["x"] == 1 and c.buffers["c"] == ()
    assert [a.value for a in c.history.occurred] == [None, 1, 1]


def test_full_channel_disables_send_and_empty_disables_receive():
    _, sys_ = _system(CHANNEL.format(cap=1))
    c = _start(sys_, heap={"v": 0, "x": 0})
    assert not any(p == "R" for p, _ in enabled(c, sys_))
    c = _fire(c, sys_, "S", 0)
    assert not any(p == "S" and e.index == 0 for p, e in enabled(c, sys_))


def test_disabled_edge_is_a_contract_error():
    _, sys_ = _system(CHANNEL.format(cap=1))
    c = _start(sys_, heap={"v": 0, "x": 0})
    edge = sys_.unit("R").edges[0]
    with pytest.raises(ContractError):
        step(c, ("R", edge), sys_)


def test_out_of_domain_write_faults():
    _, sys_ = _system("program P { var b : bool = 1\n start l0\n"
                      " loc l0: when top do b := b + 1 goto l1\n loc l1 }")
    c = _start(sys_, heap={"b": 1})
    with pytest.raises(Fault):
        _fire(c, sys_, "P")


def test_status_distinguishes_blocked_from_terminated():
    _, sys_ = _system("chan c cap 1 dom bool\nprogram R { var x : bool\n start l0\n"
                      " loc l0: when top do c?x goto l1\n loc l1 }")
    assert status(_start(sys_, heap={"x": 0}), sys_) == "blocked"
    _, sys2 = _system("program P { start l0\n loc l0: when top do skip goto l1\n loc l1 }")
    c = _fire(_start(sys2), sys2, "P")
    assert status(c, sys2) == "terminated"


def test_node_binding_tags_history_with_node():
    low = load(fixture_text("node_rules.dvl"))
    sys_ = low.system()
    c = _start(sys_, heap={"v": 0, "s0": 1, "s1": 0})
    c = _fire(c, sys_, "A")
    assert c.history.occurred[-1].node == "N2"


def test_composition_rejects_shared_writes():
    text = ("var g : bool = 0\n"
            "program P { loc l0: when top do g := 1 goto l1\n loc l1 }\n"
            "program Q { loc l0: when top do g := 0 goto l1\n loc l1 }\n")
    low = load(text)
    with pytest.raises(CompositionError):
        low.system()


def test_configuration_digest_ignores_history():
    _, sys_ = _system(CHANNEL.format(cap=2))
    c = _start(sys_, heap={"v": 0, "x": 0})
    c1 = _fire(_fire(c, sys_, "S", 0), sys_, "R", 0)
    assert c1.digest() == c.digest()
    assert c1.key() == c.key()
    assert len(c1.history) == 2


# -- properties: FIFO order and capacity safety --------------------------------


@settings(max_examples=200, deadline=None)
@given(cap=st.integers(1, 2), moves=st.lists(st.sampled_from(["inc", "send", "recv"]),
                                            max_size=25))
def test_channel_is_fifo_and_never_exceeds_capacity(cap, moves):
    _, sys_ = _system(CHANNEL.format(cap=cap))
    c = _start(sys_, heap={"v": 0, "x": 0})
    model: deque = deque()
    v = 0
    received = []
    for m in moves:
        choices = {(p, e.index) for p, e in enabled(c, sys_)}
        if m == "send":
            assert (("S", 0) in choices) == (len(model) < cap)
            if len(model) < cap:
                c = _fire(c, sys_, "S", 0)
                model.append(v)
        elif m == "recv":
            assert (("R", 0) in choices) == bool(model)
            if model:
                c = _fire(c, sys_, "R", 0)
                received.append(c.heap["x"])
                assert received[-1] == model.popleft()
        elif v < 2:
            c = _fire(c, sys_, "S", 1)
            v += 1
        assert len(c.buffers["c"]) <= cap
        assert list(c.buffers["c"]) == list(model)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=8))
def test_history_precedence_matches_positions(labels):
    occ = tuple(OccurredAction("P", None, 0, Skip(), lab, k) for k, lab in enumerate(labels))
    h = ActionHistory(occ)
    pairs = set(h.pred())
    for i, a in enumerate(occ):
        for j, b in enumerate(occ):
            assert ((a, b) in pairs) == (i < j) == h.precedes(a, b)
