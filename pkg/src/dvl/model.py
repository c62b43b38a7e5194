"""Operational semantics of program units, channels, nodes and their composition.

Program variables and shared variables live in the heap as named cells (the
cell address is the variable name); logical variables live in the store and
are constant along a run. Cells obtained with ``alloc`` get addresses ``#k``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

from dvl.syntax import (
    ActAtom, Acquire, Alloc, And, Assign, BinOp, BoolConst, Cmp, Const, Eventually,
    Free, Load, Neg, Not, Or, Prec, Recv, Release, Send, Skip, Store, Var,
)

PTR = "ptr"


class Fault(Exception):
    """Runtime fault: unallocated cell, out-of-domain value, ill-typed operand."""


class ContractError(Exception):
    """A caller violated an operation's precondition."""


class CompositionError(Exception):
    pass


# ---------------------------------------------------------------------------
# evaluation


def eval_expr(e, store: Mapping, heap: Mapping):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name in store:
            return store[e.name]
        try:
            return heap[e.name]
        except KeyError:
            raise Fault(f"read of unallocated variable {e.name!r}") from None
    if isinstance(e, Neg):
        v = eval_expr(e.operand, store, heap)
        if not isinstance(v, int):
            raise Fault("arithmetic on an address")
        return -v
    if isinstance(e, BinOp):
        a, b = eval_expr(e.left, store, heap), eval_expr(e.right, store, heap)
        if not (isinstance(a, int) and isinstance(b, int)):
            raise Fault("arithmetic on an address")
        return a + b if e.op == "+" else a - b
    raise TypeError(f"not an expression: {e!r}")


_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def eval_pure(f, store: Mapping, heap: Mapping) -> bool:
    if isinstance(f, BoolConst):
        return f.value
    if isinstance(f, Cmp):
        a, b = eval_expr(f.left, store, heap), eval_expr(f.right, store, heap)
        if f.op not in ("==", "!=") and not (isinstance(a, int) and isinstance(b, int)):
            raise Fault("ordering comparison on an address")
        return _CMP[f.op](a, b)
    if isinstance(f, Not):
        return not eval_pure(f.operand, store, heap)
    if isinstance(f, And):
        return eval_pure(f.left, store, heap) and eval_pure(f.right, store, heap)
    if isinstance(f, Or):
        return eval_pure(f.left, store, heap) or eval_pure(f.right, store, heap)
    raise TypeError(f"not a pure formula: {f!r}")


# ---------------------------------------------------------------------------
# static structure


@dataclass(frozen=True)
class Channel:
    name: str
    capacity: int
    domain: tuple


@dataclass(frozen=True)
class Edge:
    """``source --[guard / await] action--> target``; ``index`` is per program."""

    program: str
    index: int
    source: str
    guard: object
    action: object
    target: str
    await_: object = None
    label: Optional[str] = None


@dataclass(frozen=True)
class ProgramUnit:
    """A program unit (L, A, E, ->, L0, g0) over cells and channels.

    The effect function E is realised by :func:`step`; ``actions`` is the set
    of distinct actions labelling edges, communications included.
    """

    name: str
    locations: tuple[str, ...]
    edges: tuple[Edge, ...]
    initial_locations: tuple[str, ...]
    initial_condition: object = BoolConst(True)
    variables: Mapping[str, object] = field(default_factory=dict)  # name -> domain
    inits: Mapping[str, object] = field(default_factory=dict)  # name -> Expr

    @property
    def actions(self) -> frozenset:
        return frozenset(e.action for e in self.edges)

    @property
    def communications(self) -> frozenset:
        return frozenset(a for a in self.actions if isinstance(a, (Send, Recv)))

    def outgoing(self, loc: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.source == loc)

    @property
    def final_locations(self) -> tuple[str, ...]:
        sources = {e.source for e in self.edges}
        return tuple(l for l in self.locations if l not in sources)

    def writes(self) -> set[str]:
        out = set()
        for e in self.edges:
            a = e.action
            if isinstance(a, (Assign, Alloc, Load, Recv)):
                out.add(a.var)
        return out


@dataclass(frozen=True)
class NodeBinding:
    node: str
    programs: tuple[str, ...]


@dataclass(frozen=True)
class Resource:
    name: str
    footprint: tuple[str, ...]
    body: object


@dataclass(frozen=True)
class System:
    """Interleaving product of program units over shared channels."""

    units: tuple[ProgramUnit, ...]
    channels: Mapping[str, Channel]
    domains: Mapping[str, object]  # every cell and logical variable -> domain
    shared: Mapping[str, object] = field(default_factory=dict)  # shared cells -> init Expr | None
    logic: tuple[str, ...] = ()
    resources: Mapping[str, Resource] = field(default_factory=dict)
    bindings: tuple[NodeBinding, ...] = ()

    @property
    def owner(self) -> dict[str, str]:
        return {p: b.node for b in self.bindings for p in b.programs}

    def unit(self, name: str) -> ProgramUnit:
        for u in self.units:
            if u.name == name:
                return u
        raise KeyError(name)

    def index(self, name: str) -> int:
        for i, u in enumerate(self.units):
            if u.name == name:
                return i
        raise KeyError(name)

    def restrict(self, names: Sequence[str]) -> "System":
        keep = [u for u in self.units if u.name in set(names)]
        bindings = tuple(
            NodeBinding(b.node, tuple(p for p in b.programs if p in set(names)))
            for b in self.bindings)
        return replace(self, units=tuple(keep),
                       bindings=tuple(b for b in bindings if b.programs))


# ---------------------------------------------------------------------------
# runtime


@dataclass(frozen=True)
class OccurredAction:
    program: str
    node: Optional[str]
    edge: int
    action: object
    label: Optional[str]
    seq: int
    value: object = None  # value sent or received, when a communication


@dataclass(frozen=True)
class ActionHistory:
    """Occurred actions in step order; ``a -< b`` iff ``a.seq < b.seq``.

    On a single trace the precedence relation is the strict total order of
    occurrence, hence irreflexive and transitive.
    """

    occurred: tuple[OccurredAction, ...] = ()

    def extend(self, act: OccurredAction) -> "ActionHistory":
        return ActionHistory(self.occurred + (act,))

    def precedes(self, a: OccurredAction, b: OccurredAction) -> bool:
        return a.seq < b.seq

    def pred(self):
        """All pairs of the precedence relation."""
        occ = self.occurred
        return [(occ[i], occ[j]) for i in range(len(occ)) for j in range(i + 1, len(occ))]

    def __len__(self):
        return len(self.occurred)

    def prefix(self, n: int) -> "ActionHistory":
        return ActionHistory(self.occurred[:n])


def atom_matches(atom: ActAtom, act: OccurredAction) -> bool:
    if atom.node is not None and atom.node != act.node:
        return False
    a = act.action
    if atom.kind == "label":
        return act.label == atom.name
    if atom.kind == "send":
        return isinstance(a, Send) and a.channel == atom.name and a.expr == atom.arg
    return isinstance(a, Recv) and a.channel == atom.name and a.var == atom.arg


def _frozen(d: Mapping) -> Mapping:
    return MappingProxyType(dict(d))


@dataclass(frozen=True, eq=False)
class Configuration:
    """Global state: per-program location, store, heap, channel buffers, locks, history."""

    locations: tuple[str, ...]
    store: Mapping[str, object]
    heap: Mapping[str, object]
    buffers: Mapping[str, tuple]
    locks: Mapping[str, Optional[str]]
    history: ActionHistory = ActionHistory()

    def program_locations(self, system: System) -> dict[str, str]:
        return {u.name: l for u, l in zip(system.units, self.locations)}

    def key(self) -> tuple:
        """Dedup key: state modulo history, alloc addresses canonically renamed."""
        heap, rename = canonical_heap(self.heap)
        return (self.locations, tuple(sorted(self.store.items())), heap,
                tuple(sorted(self.buffers.items())), tuple(sorted(self.locks.items())))

    def to_json(self, with_history: bool = True) -> dict:
        out = {
            "locations": list(self.locations),
            "store": dict(sorted(self.store.items())),
            "heap": {k: self.heap[k] for k in sorted(self.heap)},
            "buffers": {k: list(v) for k, v in sorted(self.buffers.items())},
            "locks": dict(sorted(self.locks.items())),
        }
        if with_history:
            out["history"] = [history_entry(a) for a in self.history.occurred]
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_json(with_history=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (self.locations == other.locations and dict(self.store) == dict(other.store)
                and dict(self.heap) == dict(other.heap)
                and dict(self.buffers) == dict(other.buffers)
                and dict(self.locks) == dict(other.locks) and self.history == other.history)

    def __hash__(self):
        return hash(self.key())


def history_entry(a: OccurredAction) -> dict:
    from dvl.dsl.printer import action_str

    return {"seq": a.seq, "program": a.program, "node": a.node, "edge": a.edge,
            "action": action_str(a.action), "label": a.label, "value": a.value}


def canonical_heap(heap: Mapping) -> tuple[tuple, dict]:
    """Rename ``#k`` addresses by first occurrence from named cells."""
    rename: dict[str, str] = {}

    def visit(v):
        if isinstance(v, str) and v.startswith("#") and v not in rename:
            rename[v] = f"#{len(rename) + 1}"
            if v in heap:
                visit(heap[v])

    named = sorted(k for k in heap if not k.startswith("#"))
    for k in named:
        visit(heap[k])
    for k in sorted(k for k in heap if k.startswith("#")):
        visit(k)
    out = []
    for k, v in heap.items():
        out.append((rename.get(k, k), rename.get(v, v) if isinstance(v, str) else v))
    return tuple(sorted(out, key=lambda kv: (kv[0].startswith("#"), kv[0]))), rename


def make_configuration(system: System, locations, store=None, heap=None, buffers=None,
                       locks=None, history=None) -> Configuration:
    return Configuration(
        tuple(locations),
        _frozen(store or {}),
        _frozen(heap or {}),
        _frozen({c: tuple((buffers or {}).get(c, ())) for c in system.channels}),
        _frozen({r: (locks or {}).get(r) for r in system.resources}),
        history or ActionHistory(),
    )


def _in_domain(value, dom) -> bool:
    if dom == PTR:
        return isinstance(value, str) and value.startswith("#")
    return value in dom


def _fresh_address(heap: Mapping) -> str:
    k = 1
    while f"#{k}" in heap:
        k += 1
    return f"#{k}"


def _address(v) -> str:
    if not (isinstance(v, str) and v.startswith("#")):
        raise Fault(f"dereference of non-address {v!r}")
    return v


def _await_holds(edge: Edge, config: Configuration) -> bool:
    if edge.await_ is None:
        return True
    from dvl.assertions import sat_env

    return sat_env(config.history, edge.await_)


def edge_enabled(system: System, config: Configuration, i: int, edge: Edge) -> bool:
    try:
        if not eval_pure(edge.guard, config.store, config.heap):
            return False
    except Fault:
        return True  # the step itself reports the fault
    if not _await_holds(edge, config):
        return False
    a = edge.action
    if isinstance(a, Send):
        return len(config.buffers[a.channel]) < system.channels[a.channel].capacity
    if isinstance(a, Recv):
        return len(config.buffers[a.channel]) > 0
    if isinstance(a, Acquire):
        return config.locks.get(a.resource) is None
    if isinstance(a, Release):
        return config.locks.get(a.resource) == system.units[i].name
    return True


def enabled(config: Configuration, system: System) -> list[tuple[str, Edge]]:
    """Enabled (program-id, edge) pairs, ordered by program then edge index."""
    out = []
    for i, unit in enumerate(system.units):
        loc = config.locations[i]
        for edge in unit.outgoing(loc):
            if edge_enabled(system, config, i, edge):
                out.append((unit.name, edge))
    return out


def _check_domain(system: System, var: str, value):
    dom = system.domains.get(var)
    if dom is not None and not _in_domain(value, dom):
        raise Fault(f"value {value!r} outside Dom({var})")


def step(config: Configuration, choice: tuple[str, Edge], system: System) -> Configuration:
    """Fire one enabled edge. Raises :class:`Fault` on runtime faults."""
    prog, edge = choice
    i = system.index(prog)
    if config.locations[i] != edge.source or edge not in system.units[i].edges \
            or not edge_enabled(system, config, i, edge):
        raise ContractError(f"edge {edge.index} of {prog} is not enabled")
    if not eval_pure(edge.guard, config.store, config.heap):
        raise ContractError("guard does not hold")
    store, heap = config.store, dict(config.heap)
    buffers, locks = config.buffers, config.locks
    a = edge.action
    value = None

    def write(var, val):
        if var not in heap:
            raise Fault(f"write to unallocated variable {var!r}")
        _check_domain(system, var, val)
        heap[var] = val

    if isinstance(a, Skip):
        pass
    elif isinstance(a, Assign):
        write(a.var, eval_expr(a.expr, store, heap))
    elif isinstance(a, Send):
        value = eval_expr(a.expr, store, heap)
        if value not in system.channels[a.channel].domain:
            raise Fault(f"value {value!r} outside Dom({a.channel})")
        buffers = dict(buffers)
        buffers[a.channel] = buffers[a.channel] + (value,)
        buffers = _frozen(buffers)
    elif isinstance(a, Recv):
        buffers = dict(buffers)
        value, rest = buffers[a.channel][0], buffers[a.channel][1:]
        buffers[a.channel] = rest
        buffers = _frozen(buffers)
        write(a.var, value)
    elif isinstance(a, Alloc):
        addr = _fresh_address(heap)
        heap[addr] = eval_expr(a.expr, store, heap)
        write(a.var, addr)
    elif isinstance(a, Load):
        addr = _address(eval_expr(a.addr, store, heap))
        if addr not in heap:
            raise Fault(f"load from dangling address {addr}")
        write(a.var, heap[addr])
    elif isinstance(a, Store):
        addr = _address(eval_expr(a.addr, store, heap))
        if addr not in heap:
            raise Fault(f"store to dangling address {addr}")
        heap[addr] = eval_expr(a.expr, store, heap)
    elif isinstance(a, Free):
        addr = _address(eval_expr(a.addr, store, heap))
        if addr not in heap:
            raise Fault(f"double free of {addr}")
        del heap[addr]
    elif isinstance(a, Acquire):
        locks = _frozen({**locks, a.resource: prog})
    elif isinstance(a, Release):
        locks = _frozen({**locks, a.resource: None})
    else:
        raise TypeError(f"unknown action {a!r}")

    locations = config.locations[:i] + (edge.target,) + config.locations[i + 1:]
    occurred = OccurredAction(prog, system.owner.get(prog), edge.index, a, edge.label,
                              len(config.history), value)
    return Configuration(locations, store, _frozen(heap), buffers, locks,
                         config.history.extend(occurred))


def status(config: Configuration, system: System) -> str:
    """``running``, ``terminated`` (all programs final) or ``blocked``."""
    if enabled(config, system):
        return "running"
    for unit, loc in zip(system.units, config.locations):
        if unit.outgoing(loc):
            return "blocked"
    return "terminated"


# ---------------------------------------------------------------------------
# composition


def compose_parallel(units: Sequence[ProgramUnit], *, channels: Mapping[str, Channel],
                     domains: Mapping[str, object], shared: Mapping | None = None,
                     logic: Sequence[str] = (), resources: Mapping | None = None,
                     node: str = "main") -> System:
    """Program-level parallel composition ``P0 || ... || Pn`` on a single node."""
    shared = dict(shared or {})
    resources = dict(resources or {})
    names = [u.name for u in units]
    if len(set(names)) != len(names):
        raise CompositionError("duplicate program in composition")
    guarded = {c for r in resources.values() for c in r.footprint}
    plain = set(shared) - guarded
    for i, u in enumerate(units):
        for w in units[i + 1:]:
            clash = u.writes() & w.writes() & plain
            if clash:
                raise CompositionError(
                    f"programs {u.name} and {w.name} both write {sorted(clash)}")
    return System(tuple(units), dict(channels), dict(domains), shared, tuple(logic),
                  resources, (NodeBinding(node, tuple(names)),) if units else ())


def compose_nodes(bindings: Sequence[NodeBinding], systems: Mapping[str, System]) -> System:
    """Node-level composition ``S(N0) ||N ... ||N S(Nn)``."""
    nodes = [b.node for b in bindings]
    if len(set(nodes)) != len(nodes):
        raise CompositionError("duplicate node in composition")
    claimed: dict[str, str] = {}
    for b in bindings:
        for p in b.programs:
            if p in claimed:
                raise CompositionError(f"program {p} claimed by nodes {claimed[p]} and {b.node}")
            claimed[p] = b.node
    units, channels, domains, shared, logic, resources = [], {}, {}, {}, [], {}
    for b in bindings:
        s = systems[b.node]
        for p in b.programs:
            units.append(s.unit(p))
        channels.update(s.channels)
        domains.update(s.domains)
        shared.update(s.shared)
        logic += [l for l in s.logic if l not in logic]
        resources.update(s.resources)
    guarded = {c for r in resources.values() for c in r.footprint}
    plain = set(shared) - guarded
    for i, u in enumerate(units):
        for w in units[i + 1:]:
            clash = u.writes() & w.writes() & plain
            if clash:
                raise CompositionError(f"programs {u.name} and {w.name} both write {sorted(clash)}")
    return System(tuple(units), channels, domains, shared, tuple(logic), resources,
                  tuple(NodeBinding(b.node, tuple(b.programs)) for b in bindings))
