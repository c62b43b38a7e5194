"""Satisfaction and entailment for spatial assertions and environment factors.

Spatial assertions use the classical reading: ``x |-> v`` holds only on the
one-cell heap, ``emp`` only on the empty heap, and pure comparisons hold on
any heap. Pure comparisons read the whole state, not the sub-heap.
Environment factors are history predicates; they contain no negation, so
every factor is monotone in the history and ``<>phi`` evaluated at the end of
a completed trace coincides with ``phi``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

from dvl.model import PTR, ActionHistory, Fault, OccurredAction, atom_matches, eval_expr, eval_pure
from dvl.syntax import (
    ActAtom, And, BoolConst, Cmp, Cond, Deref, Emp, Eventually, InvRef, Not, Or,
    PointsTo, Prec, Send, Recv, Star, TOP, Var, conj, conjuncts, is_env,
)
from dvl.dsl.wellformed import expr_vars, formula_vars


# ---------------------------------------------------------------------------
# construction


def star(p, q):
    """Separating conjunction node."""
    return Star(p, q)


def big_star(items):
    """Iterated separating conjunction, right-associated; ``emp`` when empty."""
    items = list(items)
    if not items:
        return Emp()
    out = items[-1]
    for item in reversed(items[:-1]):
        out = Star(item, out)
    return out


def expand_invariants(f, resources: Mapping | None):
    """Replace invariant references by ``(cells |-> - * ...) & body``."""
    if isinstance(f, InvRef):
        if not resources or f.name not in resources:
            raise KeyError(f"unknown resource invariant {f.name!r}")
        r = resources[f.name]
        cells = big_star([PointsTo(c, None) for c in r.footprint])
        return And(cells, r.body)
    if isinstance(f, (And, Or, Star)):
        return type(f)(expand_invariants(f.left, resources), expand_invariants(f.right, resources))
    if isinstance(f, (Not, Eventually)):
        return type(f)(expand_invariants(f.operand, resources))
    return f


# ---------------------------------------------------------------------------
# spatial satisfaction


def _addr(loc, store, full):
    if isinstance(loc, str):
        return store[loc] if loc in store else loc
    return eval_expr(loc.addr, store, full)


def _pure_ok(f, store, full) -> bool:
    try:
        return eval_pure(f, store, full)
    except Fault:
        return False


def _sat(f, store, full, sub: frozenset, resources) -> bool:
    if isinstance(f, Emp):
        return not sub
    if isinstance(f, (BoolConst, Cmp)):
        return _pure_ok(f, store, full)
    if isinstance(f, PointsTo):
        try:
            a = _addr(f.loc, store, full)
        except Fault:
            return False
        if sub != {a}:
            return False
        if f.value is None:
            return True
        try:
            return full[a] == eval_expr(f.value, store, full)
        except Fault:
            return False
    if isinstance(f, Star):
        cells = sorted(sub, key=str)
        for r in range(len(cells) + 1):
            for left in itertools.combinations(cells, r):
                left = frozenset(left)
                if _sat(f.left, store, full, left, resources) and \
                        _sat(f.right, store, full, sub - left, resources):
                    return True
        return False
    if isinstance(f, And):
        return _sat(f.left, store, full, sub, resources) and _sat(f.right, store, full, sub, resources)
    if isinstance(f, Or):
        return _sat(f.left, store, full, sub, resources) or _sat(f.right, store, full, sub, resources)
    if isinstance(f, Not):
        return not _sat(f.operand, store, full, sub, resources)
    if isinstance(f, InvRef):
        return _sat(expand_invariants(f, resources), store, full, sub, resources)
    raise TypeError(f"not a spatial assertion: {f!r}")


def sat_spatial(store: Mapping, heap: Mapping, p, resources: Mapping | None = None) -> bool:
    """Exact satisfaction ``(store, heap) |= p``."""
    if any(is_env(c) for c in conjuncts(p)):
        raise TypeError("environment factors are not spatial assertions")
    sh = symbolic(p, resources)
    if sh is not None:
        return sh.holds(store, heap)
    return _sat(p, store, heap, frozenset(heap), resources)


def sat_spatial_loose(store: Mapping, heap: Mapping, p, resources: Mapping | None = None) -> bool:
    """``(store, heap) |= p * true``: ``p`` holds on some sub-heap."""
    sh = symbolic(p, resources)
    if sh is not None:
        return SymHeap(sh.atoms, sh.pure, exact=False).holds(store, heap)
    return _sat(Star(p, TOP), store, heap, frozenset(heap), resources)


# ---------------------------------------------------------------------------
# symbolic heaps: the decidable fragment


@dataclass(frozen=True)
class SymHeap:
    """``pure & (a1 * ... * an)``, exact, or ``* true`` when not exact."""

    atoms: tuple[PointsTo, ...]
    pure: object
    exact: bool = True

    def resolve(self, store, heap) -> Optional[dict]:
        """Concrete cells claimed by the atoms, or None when ill-defined/overlapping."""
        cells = {}
        for a in self.atoms:
            try:
                addr = _addr(a.loc, store, heap)
            except Fault:
                return None
            if addr in cells:
                return None
            cells[addr] = a.value
        return cells

    def holds(self, store, heap, view=None) -> bool:
        """Atoms are matched against ``heap``; values and pure parts read ``view``."""
        view = heap if view is None else view
        cells = self.resolve(store, view)
        if cells is None:
            return False
        if self.exact and set(cells) != set(heap):
            return False
        for addr, val in cells.items():
            if addr not in heap:
                return False
            if val is not None:
                try:
                    if heap[addr] != eval_expr(val, store, view):
                        return False
                except Fault:
                    return False
        return _pure_ok(self.pure, store, view)


def symbolic(f, resources: Mapping | None = None) -> Optional[SymHeap]:
    """Normalize into the symbolic-heap fragment, or None when outside it."""
    try:
        f = expand_invariants(f, resources)
    except KeyError:
        return None
    return _sym(f)


def _is_pure(f) -> bool:
    if isinstance(f, (BoolConst, Cmp)):
        return True
    if isinstance(f, Not):
        return _is_pure(f.operand)
    if isinstance(f, (And, Or)):
        return _is_pure(f.left) and _is_pure(f.right)
    return False


def _sym(f) -> Optional[SymHeap]:
    if _is_pure(f):
        return SymHeap((), f, exact=False)
    if isinstance(f, Emp):
        return SymHeap((), TOP, exact=True)
    if isinstance(f, PointsTo):
        return SymHeap((f,), TOP, exact=True)
    if isinstance(f, Star):
        l, r = _sym(f.left), _sym(f.right)
        if l is None or r is None:
            return None
        return SymHeap(l.atoms + r.atoms, conj([l.pure, r.pure]), l.exact and r.exact)
    if isinstance(f, And):
        l, r = _sym(f.left), _sym(f.right)
        if l is None or r is None:
            return None
        if _is_pure(f.left):
            return SymHeap(r.atoms, conj([l.pure, r.pure]), r.exact)
        if _is_pure(f.right):
            return SymHeap(l.atoms, conj([l.pure, r.pure]), l.exact)
        return None
    return None


# ---------------------------------------------------------------------------
# environment factors


def sat_env(history: ActionHistory, phi, pos: Optional[int] = None) -> bool:
    """Evaluate an environment factor on the history prefix of length ``pos``.

    ``pos`` defaults to the whole (completed) history. ``<>phi`` holds when
    ``phi`` holds at some position from ``pos`` to the end of the trace.
    """
    n = len(history) if pos is None else pos
    occ = history.occurred
    if isinstance(phi, BoolConst):
        return phi.value
    if isinstance(phi, ActAtom):
        return any(atom_matches(phi, a) for a in occ[:n])
    if isinstance(phi, Prec):
        for a, b in zip(phi.items, phi.items[1:]):
            if not _precedes(a, b, occ[:n]):
                return False
        return True
    if isinstance(phi, Eventually):
        return any(sat_env(history, phi.operand, k) for k in range(n, len(history) + 1))
    if isinstance(phi, And):
        return sat_env(history, phi.left, pos) and sat_env(history, phi.right, pos)
    raise TypeError(f"not an environment factor: {phi!r}")


def _precedes(a: ActAtom, b: ActAtom, occ) -> bool:
    seen_a = False
    for x in occ:
        if seen_a and atom_matches(b, x):
            return True
        if atom_matches(a, x):
            seen_a = True
    return False


def env_requirements(phi) -> tuple[frozenset, frozenset]:
    """(occurred atoms, precedence pairs) whose conjunction is equivalent to phi."""
    atoms, pairs = set(), set()

    def walk(f):
        if isinstance(f, BoolConst):
            if not f.value:
                raise ValueError("false is not an environment factor")
            return
        if isinstance(f, ActAtom):
            atoms.add(f)
        elif isinstance(f, Prec):
            for a, b in zip(f.items, f.items[1:]):
                pairs.add((a, b))
        elif isinstance(f, Eventually):
            walk(f.operand)
        elif isinstance(f, And):
            walk(f.left)
            walk(f.right)
        else:
            raise TypeError(f"not an environment factor: {f!r}")

    walk(phi)
    return frozenset(atoms), frozenset(pairs)


FRESH_NODE = "?"


def _concrete(atom: ActAtom) -> ActAtom:
    return atom if atom.node is not None else ActAtom(atom.kind, atom.name, atom.arg, FRESH_NODE)


def _occurrence(atom: ActAtom, seq: int) -> OccurredAction:
    if atom.kind == "send":
        action, label = Send(atom.name, atom.arg), None
    elif atom.kind == "recv":
        action, label = Recv(atom.name, atom.arg), None
    else:
        from dvl.syntax import Skip
        action, label = Skip(), atom.name
    return OccurredAction("?", atom.node, -1, action, label, seq)


def _matches(atom: ActAtom, concrete: ActAtom) -> bool:
    return atom_matches(atom, _occurrence(concrete, 0))


def env_entails(p, q) -> tuple[bool, Optional[ActionHistory]]:
    """Decide ``p |= q`` for environment factors; returns (valid, counter-history).

    The candidate counter-models give each requirement of ``p`` its own
    occurrence, and then also identify compatible occurrences (one event can
    witness several requirements). Merging only adds matches for occurrence
    atoms, so those are checked on the unmerged model; a precedence of ``q``
    can fail only in some merged model.
    """
    p_atoms, p_pairs = env_requirements(p)
    q_atoms, q_pairs = env_requirements(q)
    # one dedicated occurrence per requirement of p; node-less atoms get a fresh node
    events: list[ActAtom] = [_concrete(a) for a in sorted(p_atoms, key=repr)]
    order: list[tuple[int, int]] = []
    for a, b in sorted(p_pairs, key=repr):
        events.append(_concrete(a))
        events.append(_concrete(b))
        order.append((len(events) - 2, len(events) - 1))
    for qa in sorted(q_atoms, key=repr):
        if not any(_matches(qa, e) for e in events):
            return False, _linearize(events, order)
    if not q_pairs:
        return True, None
    for evs, ordr in _merged_models(events, order):
        for q1, q2 in sorted(q_pairs, key=repr):
            # try to order every q2-occurrence before every q1-occurrence
            extra = [(j, i) for i, e in enumerate(evs) for j, f in enumerate(evs)
                     if i != j and _matches(q1, e) and _matches(q2, f)]
            hist = _linearize(evs, ordr + extra)
            if hist is not None:
                return False, hist
    return True, None


def _partitions(items: list) -> Iterator[list[list]]:
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for part in _partitions(rest):
        yield [[head]] + part
        for k in range(len(part)):
            yield part[:k] + [[head] + part[k]] + part[k + 1:]


def _mergeable(group: list[ActAtom]) -> bool:
    return len({e.node for e in group if e.node != FRESH_NODE}) <= 1


def _merged_models(events: list[ActAtom], order: list[tuple[int, int]]):
    """Every way of identifying compatible occurrences that keeps the order strict."""
    classes: dict = {}
    for i, e in enumerate(events):
        classes.setdefault((e.kind, e.name, e.arg), []).append(i)
    options = [[part for part in _partitions(idx)
                if all(_mergeable([events[i] for i in block]) for block in part)]
               for idx in classes.values()]
    for choice in itertools.product(*options):
        blocks = [block for part in choice for block in part]
        rep = {i: k for k, block in enumerate(blocks) for i in block}
        if any(rep[a] == rep[b] for a, b in order):
            continue
        merged = []
        for block in blocks:
            nodes = {events[i].node for i in block} - {FRESH_NODE}
            e = events[block[0]]
            merged.append(ActAtom(e.kind, e.name, e.arg, nodes.pop() if nodes else FRESH_NODE))
        ordr = sorted({(rep[a], rep[b]) for a, b in order})
        if _linearize(merged, ordr) is not None:
            yield merged, ordr


def _linearize(events, order) -> Optional[ActionHistory]:
    n = len(events)
    succ = {i: set() for i in range(n)}
    indeg = [0] * n
    for a, b in set(order):
        if b not in succ[a]:
            succ[a].add(b)
            indeg[b] += 1
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    out = []
    while ready:
        i = ready.pop(0)
        out.append(i)
        for j in sorted(succ[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
        ready.sort()
    if len(out) != n:
        return None
    return ActionHistory(tuple(_occurrence(events[i], k) for k, i in enumerate(out)))


# ---------------------------------------------------------------------------
# entailment


@dataclass(frozen=True)
class Context:
    """Typing context: value domains and which names live in the store."""

    domains: Mapping[str, object] = field(default_factory=dict)
    store_vars: frozenset = frozenset()
    resources: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class EntailResult:
    verdict: str  # valid | invalid | unknown
    witness: Optional[dict] = None
    reason: str = ""

    def __bool__(self):
        return self.verdict == "valid"


def _pair(x):
    if isinstance(x, Cond):
        env, spatial = x.split()
        return conj(conjuncts(x.foreign) + conjuncts(env)), spatial
    if isinstance(x, tuple):
        return x
    return Cond(TOP, x).split()


class OutOfFragment(Exception):
    pass


def _value_domain(name, ctx: Context):
    dom = ctx.domains.get(name)
    if dom is None or dom == PTR:
        raise OutOfFragment(f"no finite domain for {name!r}")
    return dom


def models(sh: SymHeap, ctx: Context, extra_store=(), frozen=None) -> Iterator[tuple[dict, dict, dict]]:
    """Enumerate the canonical models of a symbolic heap as (store, owned, view).

    ``owned`` holds exactly the atoms' cells; ``view`` adds the read-only
    ``frozen`` cells that pure parts may read. With ``frozen=None`` every cell
    read by the pure part and not claimed by an atom is frozen (none when the
    heap is exact, since such reads would fault). Pure conjuncts prune the
    search as soon as their variables are bound, and equalities propagate.
    """
    names = set(formula_vars(sh.pure))
    for a in sh.atoms:
        if a.value is not None:
            names |= expr_vars(a.value)
        if isinstance(a.loc, Deref):
            raise OutOfFragment("address arithmetic outside the named-cell fragment")
    names |= set(extra_store)
    owned_names = [a.loc for a in sh.atoms]
    if any(n in ctx.store_vars for n in owned_names):
        raise OutOfFragment("points-to through a logical variable")
    if len(set(owned_names)) != len(owned_names):
        return  # overlapping atoms: unsatisfiable
    store_names = sorted(n for n in names if n in ctx.store_vars)
    if any(ctx.domains.get(n) == PTR for n in store_names):
        raise OutOfFragment("pointer-valued logical variable")
    if frozen is None:
        frozen = [] if sh.exact else sorted(
            n for n in names if n not in ctx.store_vars and n not in owned_names)
    frozen = [n for n in frozen if n not in owned_names]
    variables = [("s", n) for n in store_names] + [("h", c) for c in owned_names] + \
        [("f", c) for c in frozen]
    domains = {n: _value_domain(n, ctx) for _, n in variables}

    checks = [(frozenset(formula_vars(part)), part) for part in conjuncts(sh.pure)]
    for a in sh.atoms:
        if a.value is not None:
            checks.append((frozenset(expr_vars(a.value)) | {a.loc}, Cmp("==", Var(a.loc), a.value)))
    by_name: dict[str, list] = {}
    for need, f in checks:
        for n in need:
            by_name.setdefault(n, []).append((need, f))

    store: dict = {}
    owned: dict = {}
    view: dict = {}

    def forced(n, have):
        for need, f in by_name.get(n, ()):
            if isinstance(f, Cmp) and f.op == "==" and need - {n} <= have:
                for side, other in ((f.left, f.right), (f.right, f.left)):
                    if side == Var(n) and n not in expr_vars(other):
                        try:
                            return [eval_expr(other, store, view)]
                        except Fault:
                            return []
        return None

    def consistent(n, have):
        for need, f in by_name.get(n, ()):
            if need <= have and not _pure_ok(f, store, view):
                return False
        return True

    def rec(k, have):
        if k == len(variables):
            yield dict(store), dict(owned), dict(view)
            return
        kind, n = variables[k]
        values = forced(n, have)
        if values is None:
            values = domains[n]
        else:
            values = [v for v in values if v in domains[n]]
        have = have | {n}
        for v in values:
            if kind == "s":
                store[n] = v
            else:
                view[n] = v
                if kind == "h":
                    owned[n] = v
            if consistent(n, have):
                yield from rec(k + 1, have)
            store.pop(n, None)
            owned.pop(n, None)
            view.pop(n, None)

    for st, ow, vw in rec(0, frozenset()):
        if sh.holds(st, ow, vw):
            yield st, ow, vw


def entails(p, q, ctx: Context | None = None, limit: int = 2_000_000) -> EntailResult:
    """Decide ``p |- q`` for (environment, spatial) pairs or :class:`Cond` values.

    Sound: ``valid`` only when every state satisfying ``p`` satisfies ``q``;
    ``invalid`` carries a witness {store, heap, history}; ``unknown`` outside
    the symbolic-heap fragment.
    """
    ctx = ctx or Context()
    p_env, p_sp = _pair(p)
    q_env, q_sp = _pair(q)
    try:
        ok, hist = env_entails(p_env, q_env)
    except (TypeError, ValueError) as exc:
        return EntailResult("unknown", reason=str(exc))
    if not ok:
        return EntailResult("invalid", {"store": {}, "heap": {}, "history": _hist_json(hist)},
                            "environment factor not implied")
    sp, sq = symbolic(p_sp, ctx.resources), symbolic(q_sp, ctx.resources)
    if sp is None or sq is None:
        return EntailResult("unknown", reason="assertion outside the symbolic-heap fragment")
    q_store = [n for n in formula_vars(q_sp) if n in ctx.store_vars]
    garbage = sq.exact and not sp.exact
    try:
        count = 0
        for store, _, heap in models(sp, ctx, extra_store=q_store):
            count += 1
            if count > limit:
                return EntailResult("unknown", reason="model enumeration limit reached")
            if garbage:
                heap = dict(heap)
                heap["_frame"] = 0
            if not sq.holds(store, heap):
                return EntailResult("invalid", {"store": store, "heap": heap, "history": []},
                                    "spatial assertion not implied")
    except OutOfFragment as exc:
        return EntailResult("unknown", reason=str(exc))
    return EntailResult("valid")


def _hist_json(hist: Optional[ActionHistory]) -> list:
    if hist is None:
        return []
    from dvl.model import history_entry

    return [history_entry(a) for a in hist.occurred]
