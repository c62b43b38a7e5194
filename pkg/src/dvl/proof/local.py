"""Per-program obligations: the sequencing rule over an annotated transition graph.

Each edge ``l --g: a--> l'`` is checked as the triple ``{ann(l) & g} a {ann(l')}``
by enumerating the canonical models of ``ann(l)`` over the finite domains.
Annotations are read intuitionistically: a program owns the cells named by
the points-to atoms of its annotation and nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from dvl.assertions import (
    OutOfFragment, SymHeap, big_star, env_entails, expand_invariants, models, symbolic,
)
from dvl.dsl.printer import action_str, atom_str, formula_str
from dvl.dsl.wellformed import atoms_of, expr_vars, formula_vars
from dvl.model import Fault, ProgramUnit, eval_expr, eval_pure
from dvl.proof.base import Session, action_cells_read, modified
from dvl.syntax import (
    Acquire, ActAtom, Alloc, And, Assign, Cmp, Cond, Eventually, Free, Load, PointsTo, Prec,
    Recv, Release, Send, Skip, Store, TOP, Var, conj, conjuncts,
)


@dataclass
class ProgramProof:
    """A program together with the annotation that was checked for it."""

    unit: ProgramUnit
    node: str
    ann: dict
    path: str
    pre: Cond
    post: Cond
    uses: list = field(default_factory=list)  # (kind, edge index, atom, evaluated)
    frozen_reads: set = field(default_factory=set)


def occurrence_atoms(edge, node) -> list[ActAtom]:
    """Atoms made true by firing ``edge`` on ``node``."""
    out = []
    a = edge.action
    if isinstance(a, Send):
        out.append(ActAtom("send", a.channel, a.expr, node))
    elif isinstance(a, Recv):
        out.append(ActAtom("recv", a.channel, a.var, node))
    if edge.label:
        out.append(ActAtom("label", edge.label, None, node))
    return out


def is_skeleton(edge) -> bool:
    return isinstance(edge.action, (Send, Recv)) or edge.label is not None or edge.await_ is not None


def _present(f) -> list:
    """Conjuncts of an environment factor that hold now (``<>`` parts dropped)."""
    return [c for c in conjuncts(f) if not isinstance(c, Eventually)]


def _present_atoms(f) -> list[ActAtom]:
    out = []
    for c in _present(f):
        out += atoms_of(c)
    return out


class _Local:
    def __init__(self, unit: ProgramUnit, node: str, ann: dict, session: Session, path: str,
                 rule: str):
        self.unit, self.node, self.ann, self.s = unit, node, ann, session
        self.path, self.rule = path, rule
        self.syms: dict = {}
        self.owned: dict = {}
        self.critical: dict = {}
        self.uses: list = []
        self.frozen_reads: set = set()

    # -- helpers ---------------------------------------------------------

    def fail(self, msg, where="", witness=None, verdict="refuted"):
        p = f"{self.path}/{where}" if where else self.path
        self.s.fail(verdict, self.rule, p, f"{self.unit.name}: {msg}", None, witness)

    def allowed_read(self, name, owned) -> bool:
        return name in owned or name in self.s.logic or name in self.s.immutable

    def start_sym(self, loc) -> SymHeap:
        sh = self.syms[loc]
        if loc != self.unit.initial_locations[0]:
            return sh
        atoms = list(sh.atoms)
        have = {a.loc for a in atoms}
        pure = [sh.pure, self.unit.initial_condition]
        for x, init in self.unit.inits.items():
            if x not in have:
                atoms.append(PointsTo(x, None))
            pure.append(Cmp("==", Var(x), init))
        return SymHeap(tuple(atoms), conj(pure), exact=False)

    def enum(self, sh: SymHeap, reads: set):
        owned = {a.loc for a in sh.atoms}
        frozen = sorted(n for n in reads if n not in owned and n not in self.s.logic
                        and n in self.s.immutable)
        self.frozen_reads |= set(frozen)
        store = sorted(n for n in reads if n in self.s.logic)
        return models(sh, self.s.ctx, extra_store=store, frozen=frozen)

    # -- structure -------------------------------------------------------

    def structure(self) -> bool:
        u = self.unit
        for l in u.locations:
            if l not in self.ann:
                self.fail(f"no annotation at location {l}", l)
                return False
        if len(u.initial_locations) != 1:
            self.fail("exactly one start location is required")
            return False
        if len(u.final_locations) != 1:
            self.fail("exactly one final location is required")
            return False
        for l in u.locations:
            spatial = self.ann[l].spatial
            sh = symbolic(spatial, self.s.resources)
            if sh is None or any(not isinstance(a.loc, str) for a in sh.atoms):
                self.fail(f"annotation at {l} is outside the symbolic-heap fragment", l,
                          verdict="unknown")
                return False
            self.syms[l] = SymHeap(sh.atoms, sh.pure, exact=False)
            owned = [a.loc for a in sh.atoms]
            if len(set(owned)) != len(owned):
                self.syms[l] = SymHeap(sh.atoms, conj([sh.pure]), exact=False)
            self.owned[l] = set(owned)
            bad = sorted(n for n in formula_vars(spatial) if not self.allowed_read(n, self.owned[l]))
            if bad:
                self.fail(f"annotation at {l} reads {bad} without owning them", l)
                return False
        return self._locks()

    def _locks(self) -> bool:
        u = self.unit
        start = u.initial_locations[0]
        held = {start: frozenset()}
        order = [start]
        # acyclicity is a global side condition; guard against loops here
        for _ in range(len(u.edges) * len(u.locations) + 1):
            changed = False
            for e in u.edges:
                if e.source not in held:
                    continue
                h = held[e.source]
                a = e.action
                if isinstance(a, (Send, Recv)) or e.await_ is not None or isinstance(a, Acquire):
                    if h:
                        self.fail(f"blocking action {action_str(a)} inside a critical section",
                                  e.source)
                        return False
                if isinstance(a, Acquire):
                    h = h | {a.resource}
                elif isinstance(a, Release):
                    if a.resource not in h:
                        self.fail(f"release {a.resource} outside its critical section", e.source)
                        return False
                    h = h - {a.resource}
                if e.target in held and held[e.target] != h:
                    self.fail(f"inconsistent critical sections at {e.target}", e.target)
                    return False
                if e.target not in held:
                    held[e.target] = h
                    order.append(e.target)
                    changed = True
            if not changed:
                break
        for l in u.final_locations:
            if held.get(l):
                self.fail(f"terminates holding {sorted(held[l])}", l)
                return False
        self.critical = held
        return True

    # -- resource invariants --------------------------------------------

    def invariants(self):
        for l in self.unit.locations:
            for r in self.s.resources.values():
                mine = self.owned[l] & set(r.footprint)
                if not mine or r.name in self.critical.get(l, ()):
                    continue
                if r.name in self.s.lock_protected:
                    self.fail(f"owns lock-protected cells {sorted(mine)} outside a critical "
                              "section", l)
                    return
                if mine != set(r.footprint):
                    self.fail(f"owns part of the footprint of {r.name}", l)
                    return
                self.s.entails(self.ann[l].spatial, _ri(r.name), rule=self.rule, path=f"{self.path}/{l}",
                               what=f"{self.unit.name}: location {l} must preserve {r.name}")

    # -- edges -----------------------------------------------------------

    def edges(self):
        for e in self.unit.edges:
            self.edge(e)

    def _justification(self, A: Cond, e):
        a = e.action
        cands = []
        for f in [A.foreign, e.await_ if e.await_ is not None else TOP]:
            for atom in atoms_of(f):
                if atom.kind == "send" and atom.name == a.channel and atom not in cands:
                    cands.append(atom)
        return cands

    def edge(self, e):
        s = self.s
        s.obligation()
        A, B = self.ann[e.source], self.ann[e.target]
        where = f"{e.source}->{e.target}#{e.index}"
        a = e.action
        if isinstance(a, (Alloc, Load, Store, Free)):
            self.fail(f"{action_str(a)} is outside the checker's fragment", where, verdict="unknown")
            return
        pre = self.start_sym(e.source)
        owned_pre = {x.loc for x in pre.atoms}
        reads = formula_vars(e.guard) | action_cells_read(a)
        bad = sorted(n for n in reads if not self.allowed_read(n, owned_pre))
        if bad:
            self.fail(f"edge reads {bad} without owning them", where)
            return
        writes = modified(a)
        if isinstance(a, Assign) or isinstance(a, Recv):
            if not writes <= owned_pre:
                self.fail(f"edge writes {sorted(writes - owned_pre)} without owning them", where)
                return
        payload = s.payloads.get(a.channel) if isinstance(a, (Send, Recv)) else None
        pay_sh = symbolic(payload, s.resources) if payload is not None else None
        if payload is not None and (pay_sh is None or any(not isinstance(x.loc, str)
                                                         for x in pay_sh.atoms)):
            self.fail(f"payload of {a.channel} is outside the fragment", where, verdict="unknown")
            return
        just, evaluated = None, False
        if isinstance(a, Recv):
            cands = self._justification(A, e)
            if not cands:
                self.fail(f"receive {action_str(a)} has no foreign condition {a.channel}!e "
                          "justifying it (missing atom)", where)
                return
            if len(cands) == 1:
                just = cands[0]
                evaluated = expr_vars(just.arg) <= (s.logic | s.immutable)
                if evaluated:
                    reads = reads | expr_vars(just.arg)
            self.uses.append(("recv", e.index, cands[0] if len(cands) == 1 else None, evaluated))
        post_sh = self.syms[e.target]
        all_reads = set(reads) | formula_vars(pre.pure) | formula_vars(B.spatial)
        for x in pre.atoms:
            if x.value is not None:
                all_reads |= expr_vars(x.value)
        if payload is not None:
            all_reads |= formula_vars(payload)
        if isinstance(a, (Acquire, Release)):
            all_reads |= formula_vars(s.resources[a.resource].body)
        gained = set()
        if isinstance(a, Recv):
            gained = {x.loc for x in pay_sh.atoms} if pay_sh is not None else set()
            gained.add(a.var)
        if isinstance(a, Acquire):
            gained = set(s.resources[a.resource].footprint)
        bad = sorted(n for n in formula_vars(B.spatial) - owned_pre - gained
                     if not self.allowed_read(n, set()))
        if bad:
            self.fail(f"post annotation reads {bad} without owning them", where)
            return
        try:
            states = list(self.enum(pre, (all_reads - gained) | (all_reads & owned_pre)))
        except OutOfFragment as exc:
            self.fail(str(exc), where, verdict="unknown")
            return
        for store, owned, view in states:
            try:
                if not eval_pure(e.guard, store, view):
                    continue
            except Fault as exc:
                self.fail(f"guard may fault: {exc}", where, {"store": store, "heap": view})
                return
            try:
                succs = self.execute(e, a, store, owned, view, just if evaluated else None,
                                     pay_sh, where)
            except Fault as exc:
                self.fail(f"action may fault: {exc}", where, {"store": store, "heap": view})
                return
            if succs is None:
                return
            for owned2, view2 in succs:
                if not post_sh.holds(store, owned2, view2):
                    self.fail(f"post annotation of {action_str(a)} does not hold", where,
                              {"store": store, "pre": view, "post": view2})
                    return
        self.env(e, A, B, where)

    def execute(self, e, a, store, owned, view, just, pay_sh, where):
        s = self.s
        if isinstance(a, Skip):
            return [(owned, view)]
        if isinstance(a, Assign):
            v = eval_expr(a.expr, store, view)
            self._dom(a.var, v)
            return [({**owned, a.var: v}, {**view, a.var: v})]
        if isinstance(a, Send):
            v = eval_expr(a.expr, store, view)
            if v not in s.channels[a.channel].domain:
                raise Fault(f"value {v!r} outside Dom({a.channel})")
            if pay_sh is None:
                return [(owned, view)]
            cells = {x.loc for x in pay_sh.atoms}
            if not cells <= set(owned):
                self.fail(f"send on {a.channel} must own its payload {sorted(cells - set(owned))}",
                          where)
                return None
            sub = {c: owned[c] for c in cells}
            if not pay_sh.holds(store, sub, view):
                self.fail(f"payload of {a.channel} does not hold at the send", where,
                          {"store": store, "heap": view})
                return None
            owned2 = {k: v for k, v in owned.items() if k not in cells}
            view2 = {k: v for k, v in view.items() if k not in cells or k in s.immutable}
            return [(owned2, view2)]
        if isinstance(a, Recv):
            if just is not None:
                values = [eval_expr(just.arg, store, view)]
            else:
                values = list(s.channels[a.channel].domain)
            out = []
            for v in values:
                self._dom(a.var, v)
                base_o, base_v = {**owned, a.var: v}, {**view, a.var: v}
                if pay_sh is None:
                    out.append((base_o, base_v))
                    continue
                gained = self._gain(pay_sh, store, base_o, base_v, f"payload of {a.channel}", where)
                if gained is None:
                    return None
                out += gained
            return out
        if isinstance(a, Acquire):
            r = s.resources[a.resource]
            sh = symbolic(_invref(r.name), s.resources)
            return self._gain(sh, store, owned, view, f"invariant {r.name}", where)
        if isinstance(a, Release):
            r = s.resources[a.resource]
            cells = set(r.footprint)
            if not cells <= set(owned):
                self.fail(f"release {r.name} without owning {sorted(cells - set(owned))}", where)
                return None
            sh = symbolic(_invref(r.name), s.resources)
            if not sh.holds(store, {c: owned[c] for c in cells}, view):
                self.fail(f"release {r.name} does not re-establish its invariant", where,
                          {"store": store, "heap": view})
                return None
            return [({k: v for k, v in owned.items() if k not in cells},
                     {k: v for k, v in view.items() if k not in cells})]
        raise TypeError(a)

    def _gain(self, sh: SymHeap, store, owned, view, what, where):
        cells = {x.loc for x in sh.atoms}
        if cells & set(owned):
            self.fail(f"{what} overlaps cells already owned: {sorted(cells & set(owned))}", where)
            return None
        out = []
        reads = formula_vars(sh.pure)
        for x in sh.atoms:
            if x.value is not None:
                reads |= expr_vars(x.value)
        frozen = sorted(n for n in reads if n not in cells and n not in self.s.logic)
        bad = [n for n in frozen if n not in self.s.immutable and n not in owned]
        if bad:
            self.fail(f"{what} reads {bad} it does not describe", where)
            return None
        for st, ow, vw in models(SymHeap(sh.atoms, sh.pure, exact=False), self.s.ctx,
                                 extra_store=sorted(n for n in reads if n in self.s.logic),
                                 frozen=[n for n in frozen if n not in owned]):
            if any(store.get(k, v) != v for k, v in st.items()):
                continue
            if any(view.get(k, v) != v for k, v in vw.items() if k not in cells):
                continue
            out.append(({**owned, **ow}, {**view, **ow}))
        return out

    def _dom(self, var, v):
        dom = self.s.domains.get(var)
        if dom is not None and v not in dom:
            raise Fault(f"value {v!r} outside Dom({var})")

    def env(self, e, A: Cond, B: Cond, where):
        s = self.s
        s.stats.entailments += 1
        native = A.native_env
        occ = occurrence_atoms(e, self.node)
        facts = _present(native) + list(occ)
        known = _present_atoms(native)
        if e.await_ is not None:
            facts += _present(e.await_)
            known += _present_atoms(e.await_)
        target_atoms = atoms_of(B.native_env)
        if is_skeleton(e):
            for f in atoms_of(A.foreign):
                if any(x == f or x.unplaced() == f.unplaced() for x in target_atoms):
                    if f not in known:
                        known.append(f)
                        facts.append(f)
                        self.uses.append(("inject", e.index, f, False))
        for k in known:
            for o in occ:
                if k != o:
                    facts.append(Prec((k, o)))
        ok, hist = env_entails(conj(facts), B.native_env)
        if not ok:
            from dvl.assertions import _hist_json

            self.fail(f"native environment at {e.target} not established by "
                      f"{action_str(e.action)}", where, {"history": _hist_json(hist)})

    def progress(self):
        for l in self.unit.locations:
            out = self.unit.outgoing(l)
            if not out:
                continue
            self.s.obligation()
            if any(x.await_ is not None for x in out) and len(out) != 1:
                self.fail(f"an await edge must be the only edge at {l}", l)
                return
            pre = self.start_sym(l)
            reads = set()
            for x in out:
                reads |= formula_vars(x.guard)
            bad = sorted(n for n in reads if not self.allowed_read(n, {a.loc for a in pre.atoms}))
            if bad:
                self.fail(f"guards at {l} read {bad} without owning them", l)
                return
            try:
                for store, owned, view in self.enum(pre, reads | formula_vars(pre.pure)):
                    try:
                        if not any(eval_pure(x.guard, store, view) for x in out):
                            self.fail(f"may block at {l}: no guard holds", l,
                                      {"store": store, "heap": view})
                            return
                    except Fault as exc:
                        self.fail(f"guard may fault at {l}: {exc}", l)
                        return
            except OutOfFragment as exc:
                self.fail(str(exc), l, verdict="unknown")
                return


def _invref(name):
    from dvl.syntax import InvRef

    return InvRef(name)


def _ri(name):
    """The invariant read intuitionistically: it holds of a part of the state."""
    from dvl.syntax import Star

    return Star(_invref(name), TOP)


def check_program(unit: ProgramUnit, node: str, ann: dict, session: Session, path: str,
                  rule: str = "seq") -> Optional[ProgramProof]:
    """Check the annotation ``ann`` (location -> Cond) of ``unit``.

    Returns the program's proof record, or None when a structural failure was
    recorded (the session raises on refutations when stopping at the first).
    """
    loc = _Local(unit, node, ann, session, path, rule)
    if not loc.structure():
        return None
    loc.invariants()
    loc.edges()
    loc.progress()
    start, final = unit.initial_locations[0], unit.final_locations[0]
    return ProgramProof(unit, node, ann, path, ann[start], ann[final], loc.uses, loc.frozen_reads)
