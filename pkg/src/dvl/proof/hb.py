"""Global side conditions of a composed proof.

The composition rules only eliminate foreign conditions syntactically. To make
a ``verified`` verdict imply the semantic triple, the whole network is also
checked for:

* acyclic control flow and communication determinism: every complete path of
  a program performs the same sequence of communications, labels and awaits;
* a happens-before graph over those events (program order, FIFO pairing of
  the k-th send with the k-th receive per channel, capacity edges, await
  edges) that is acyclic and balanced, which rules out deadlock;
* every foreign atom the local proofs relied on is produced by an event
  ordered before its use, and every evaluated receive is paired with a send
  of the same expression.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from dvl.dsl.printer import atom_str, formula_str
from dvl.dsl.wellformed import atoms_of
from dvl.model import OccurredAction, atom_matches
from dvl.proof.base import Session, footprint
from dvl.proof.local import ProgramProof, is_skeleton
from dvl.syntax import ActAtom, Prec, Recv, Send, conjuncts

PATH_LIMIT = 20000


@dataclass(frozen=True)
class Event:
    program: str
    index: int
    node: Optional[str]
    kind: str  # send | recv | other
    channel: Optional[str]
    arg: object
    label: Optional[str]
    await_: object

    def occurrence(self) -> OccurredAction:
        if self.kind == "send":
            action = Send(self.channel, self.arg)
        elif self.kind == "recv":
            action = Recv(self.channel, self.arg)
        else:
            from dvl.syntax import Skip

            action = Skip()
        return OccurredAction(self.program, self.node, -1, action, self.label, 0)


def _item(e):
    a = e.action
    if isinstance(a, Send):
        return ("send", a.channel, a.expr, e.label, e.await_)
    if isinstance(a, Recv):
        return ("recv", a.channel, a.var, e.label, e.await_)
    return ("other", None, None, e.label, e.await_)


class GlobalCheck:
    def __init__(self, session: Session, proofs: dict, units, owner: dict, seeds, rule="global",
                 path="root/side"):
        self.s = session
        self.proofs = proofs
        self.units = list(units)
        self.owner = owner
        self.seeds = list(seeds)
        self.rule, self.path = rule, path
        self.events: list[Event] = []
        self.edge_event: dict = {}
        self.succ: dict = {}

    def fail(self, msg, witness=None, verdict="refuted"):
        self.s.fail(verdict, self.rule, self.path, msg, None, witness)

    # -- per-program structure -------------------------------------------

    def skeletons(self) -> bool:
        for s_i, atom in enumerate(self.seeds):
            self.events.append(Event("<env>", s_i, atom.node, "send", atom.name, atom.arg, None,
                                     None))
        for u in self.units:
            self.s.obligation()
            start = u.initial_locations[0]
            seqs = []
            positions: dict = {}
            stack = [(start, (), frozenset([start]))]
            count = 0
            while stack:
                loc, items, seen = stack.pop()
                out = u.outgoing(loc)
                if not out:
                    seqs.append(items)
                    count += 1
                    if count > PATH_LIMIT:
                        self.fail(f"{u.name}: too many control paths", verdict="unknown")
                        return False
                    continue
                for e in out:
                    if e.target in seen:
                        self.fail(f"{u.name}: control flow has a cycle through {e.target}")
                        return False
                    k = len(items)
                    nxt = items
                    if is_skeleton(e):
                        if positions.setdefault(e.index, k) != k:
                            self.fail(f"{u.name}: communication position of edge {e.index} "
                                      "depends on the path")
                            return False
                        nxt = items + (_item(e),)
                    stack.append((e.target, nxt, seen | {e.target}))
            if any(s != seqs[0] for s in seqs):
                self.fail(f"{u.name}: communications differ between control paths")
                return False
            node = self.owner.get(u.name)
            for k, it in enumerate(seqs[0] if seqs else ()):
                kind, ch, arg, label, aw = it
                self.events.append(Event(u.name, k, node, kind, ch, arg, label, aw))
            for idx, k in positions.items():
                self.edge_event[(u.name, idx)] = self._find(u.name, k)
        return True

    def _find(self, prog, k) -> int:
        for i, ev in enumerate(self.events):
            if ev.program == prog and ev.index == k:
                return i
        raise KeyError((prog, k))

    # -- happens-before ----------------------------------------------------

    def _closure(self):
        n = len(self.events)
        reach = [set() for _ in range(n)]
        order = self._topo()
        if order is None:
            return None
        for i in reversed(order):
            for j in self.succ.get(i, ()):
                reach[i].add(j)
                reach[i] |= reach[j]
        return reach

    def _topo(self):
        n = len(self.events)
        indeg = [0] * n
        for i, js in self.succ.items():
            for j in js:
                indeg[j] += 1
        ready = [i for i in range(n) if indeg[i] == 0]
        out = []
        while ready:
            i = ready.pop()
            out.append(i)
            for j in self.succ.get(i, ()):
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
        return out if len(out) == n else None

    def _edge(self, a, b) -> bool:
        if b in self.succ.setdefault(a, set()):
            return False
        self.succ[a].add(b)
        return True

    def _matching(self, atom: ActAtom) -> list[int]:
        return [i for i, ev in enumerate(self.events) if atom_matches(atom, ev.occurrence())]

    def graph(self) -> bool:
        ev = self.events
        seeds = [i for i, e in enumerate(ev) if e.program == "<env>"]
        for a, b in zip(seeds, seeds[1:]):
            self._edge(a, b)
        for i, e in enumerate(ev):
            if e.program == "<env>":
                continue
            if e.index == 0:
                for s_i in seeds[-1:]:
                    self._edge(s_i, i)
            else:
                self._edge(self._find(e.program, e.index - 1), i)
        # await edges: every atom must have a unique producing event
        self.await_pairs = []
        for i, e in enumerate(ev):
            if e.await_ is None:
                continue
            for atom in atoms_of(e.await_):
                m = [j for j in self._matching(atom) if j != i]
                if len(m) != 1:
                    self.fail(f"await {formula_str(e.await_)} in {e.program}: atom "
                              f"{atom_str(atom)} has {len(m)} producing events (need exactly one)")
                    return False
                self._edge(m[0], i)
            for c in conjuncts(e.await_):
                for p in ([c] if isinstance(c, Prec) else []):
                    for a, b in zip(p.items, p.items[1:]):
                        self.await_pairs.append((self._matching(a)[0], self._matching(b)[0], e))
        channels = sorted({e.channel for e in ev if e.channel is not None})
        self.pairing: dict = {}
        while True:
            reach = self._closure()
            if reach is None:
                self.fail("happens-before graph has a cycle: the network may deadlock")
                return False
            changed = False
            for c in channels:
                sends = [i for i, e in enumerate(ev) if e.kind == "send" and e.channel == c]
                recvs = [i for i, e in enumerate(ev) if e.kind == "recv" and e.channel == c]
                so, ro = _total(sends, reach), _total(recvs, reach)
                if so is None or ro is None:
                    continue
                cap = self.s.channels[c].capacity
                for k in range(min(len(so), len(ro))):
                    changed |= self._edge(so[k], ro[k])
                for k in range(cap, len(so)):
                    if k - cap < len(ro):
                        changed |= self._edge(ro[k - cap], so[k])
            if not changed:
                break
        reach = self._closure()
        if reach is None:
            self.fail("happens-before graph has a cycle: the network may deadlock")
            return False
        self.reach = reach
        for c in channels:
            self.s.obligation()
            sends = [i for i, e in enumerate(ev) if e.kind == "send" and e.channel == c]
            recvs = [i for i, e in enumerate(ev) if e.kind == "recv" and e.channel == c]
            so, ro = _total(sends, reach), _total(recvs, reach)
            if so is None:
                self.fail(f"sends on {c} are not ordered by happens-before")
                return False
            if ro is None:
                self.fail(f"receives on {c} are not ordered by happens-before")
                return False
            if len(ro) > len(so):
                self.fail(f"channel {c}: {len(ro)} receives but only {len(so)} sends")
                return False
            if len(so) - len(ro) > self.s.channels[c].capacity:
                self.fail(f"channel {c}: {len(so) - len(ro)} unreceived sends exceed capacity")
                return False
            for k, r in enumerate(ro):
                self.pairing[r] = so[k]
        for a, b, e in self.await_pairs:
            if b not in reach[a]:
                self.fail(f"await {formula_str(e.await_)} in {e.program}: precedence not "
                          "guaranteed")
                return False
        return True

    # -- uses of foreign conditions -----------------------------------------

    def uses(self) -> bool:
        for name, proof in self.proofs.items():
            for kind, idx, atom, evaluated in proof.uses:
                self.s.obligation()
                i = self.edge_event[(name, idx)]
                if kind == "recv":
                    if atom is None or not evaluated:
                        continue
                    j = self.pairing[i]
                    send = self.events[j]
                    if not atom_matches(atom, send.occurrence()):
                        self.fail(f"{name}: receive justified by {atom_str(atom)} is paired with "
                                  f"the send {send.channel}!{_expr(send.arg)} of {send.program}")
                        return False
                else:
                    if not any(i in self.reach[j] for j in self._matching(atom)):
                        self.fail(f"{name}: foreign condition {atom_str(atom)} is not guaranteed "
                                  f"before edge {idx}")
                        return False
        return True

    def run(self) -> bool:
        return self.skeletons() and self.graph() and self.uses()


def _expr(e):
    from dvl.dsl.printer import expr_str

    return expr_str(e)


def _total(items, reach):
    """Items sorted by happens-before, or None when two are unordered."""
    for i, a in enumerate(items):
        for b in items[i + 1:]:
            if b not in reach[a] and a not in reach[b]:
                return None
    return sorted(items, key=lambda x: sum(1 for y in items if x in reach[y]))


def check_resources(session: Session, proofs: dict, target_pre, path="root/side") -> bool:
    """Initial resource invariants, lock-protected cells and payload invariants."""
    for r in session.resources.values():
        cells = set(r.footprint)
        if r.name in session.lock_protected:
            for name, proof in proofs.items():
                clash = footprint(proof.pre.spatial) & cells
                if clash:
                    session.fail("refuted", "resource", path,
                                 f"{name} claims lock-protected cells {sorted(clash)} in its pre")
                    return False
        for ch, f in session.payloads.items():
            if footprint(f) & cells and not session.entails(
                    f, _invref(r.name), rule="resource", path=path,
                    what=f"payload of {ch} must imply {r.name}"):
                return False
        if not session.entails(target_pre.spatial, _invref(r.name), rule="resource", path=path,
                               what=f"pre must establish {r.name}"):
            return False
    return True


def check_existence(session: Session, proofs: dict, target_pre, initialized: set,
                    path="root/side") -> bool:
    """Cells read without ownership must exist initially."""
    have = footprint(target_pre.spatial, session.resources) | initialized
    for name, proof in proofs.items():
        missing = sorted(proof.frozen_reads - have)
        session.obligation()
        if missing:
            session.fail("refuted", "global", path,
                         f"{name} reads {missing}, which the pre does not allocate")
            return False
    return True


def _invref(name):
    from dvl.syntax import InvRef, Star, TOP

    return Star(InvRef(name), TOP)
