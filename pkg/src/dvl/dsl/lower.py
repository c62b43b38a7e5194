from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from dvl.dsl.parser import ParseDiagnostic, parse
from dvl.dsl.wellformed import BUILTIN_DOMAINS, DEFAULT_NODE, check_wellformed
from dvl.model import (
    PTR, Channel, Edge, NodeBinding, ProgramUnit, Resource, System, compose_nodes,
    compose_parallel,
)
from dvl.syntax import (
    BoolConst, EnumDom, NamedDom, ProofOutlineDecl, PtrDom, RangeDom, SourceModel, Span,
)


class LoweringError(Exception):
    def __init__(self, diagnostics: Sequence[ParseDiagnostic]):
        super().__init__("; ".join(d.message for d in diagnostics))
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class Lowered:
    units: tuple[ProgramUnit, ...]
    channels: dict
    bindings: tuple[NodeBinding, ...]
    outlines: tuple[ProofOutlineDecl, ...]
    domains: dict
    shared: dict
    logic: tuple[str, ...]
    resources: dict

    def system(self, programs: Sequence[str] | None = None) -> System:
        """Node-composed network of the named programs (all when ``None``)."""
        keep = set(programs) if programs is not None else {u.name for u in self.units}
        per_node = {}
        bindings = []
        for b in self.bindings:
            progs = tuple(p for p in b.programs if p in keep)
            if not progs:
                continue
            units = [u for u in self.units if u.name in progs]
            per_node[b.node] = compose_parallel(
                units, channels=self.channels, domains=self.domains, shared=self.shared,
                logic=self.logic, resources=self.resources, node=b.node)
            bindings.append(NodeBinding(b.node, progs))
        return compose_nodes(bindings, per_node)

    def outline(self, name: str) -> ProofOutlineDecl:
        for o in self.outlines:
            if o.name == name:
                return o
        raise KeyError(name)


def _resolve(model: SourceModel):
    types = {}
    for t in model.types:
        types[t.name] = _dom(t.dom, types)
    return types


def _dom(d, types):
    if isinstance(d, PtrDom):
        return PTR
    if isinstance(d, RangeDom):
        return tuple(range(d.lo, d.hi + 1))
    if isinstance(d, EnumDom):
        return tuple(d.values)
    if isinstance(d, NamedDom):
        if d.name in types:
            return types[d.name]
        lo, hi = BUILTIN_DOMAINS[d.name]
        return tuple(range(lo, hi + 1))
    raise TypeError(d)


def lower(model: SourceModel) -> Lowered:
    """Map a well-formed model to program units, channels and node bindings."""
    diags = [d for d in check_wellformed(model) if d.severity == "error"]
    if diags:
        raise LoweringError(diags)
    types = _resolve(model)
    channels = {c.name: Channel(c.name, c.capacity, _dom(c.domain, types)) for c in model.channels}
    domains = {}
    for v in model.logic:
        domains[v.name] = _dom(v.dom, types)
    shared = {}
    for v in model.shared:
        domains[v.name] = _dom(v.dom, types)
        shared[v.name] = v.init
    placed = [(p, n.name) for n in model.nodes for p in n.programs]
    placed += [(p, DEFAULT_NODE) for p in model.programs]
    units = []
    for p, _ in placed:
        variables = {}
        for v in p.vars:
            variables[v.name] = domains[v.name] = _dom(v.dom, types)
        edges, k = [], 0
        for loc in p.locs:
            for e in loc.edges:
                edges.append(Edge(p.name, k, loc.name, e.guard, e.action, e.target, e.await_, e.label))
                k += 1
        start = p.start or (p.locs[0].name,)
        units.append(ProgramUnit(
            p.name, tuple(l.name for l in p.locs), tuple(edges), tuple(start),
            p.init if p.init is not None else BoolConst(True), variables,
            {v.name: v.init for v in p.vars if v.init is not None}))
    bindings = [NodeBinding(n.name, tuple(p.name for p in n.programs)) for n in model.nodes]
    if model.programs:
        bindings.append(NodeBinding(DEFAULT_NODE, tuple(p.name for p in model.programs)))
    resources = {r.name: Resource(r.name, r.footprint, r.body) for r in model.invariants}
    return Lowered(tuple(units), channels, tuple(bindings), model.outlines, domains, shared,
                   tuple(v.name for v in model.logic), resources)


def load(text: str) -> Lowered:
    """Parse and lower in one go; raises :class:`LoweringError` on diagnostics."""
    result = parse(text)
    if isinstance(result, list):
        raise LoweringError(result)
    return lower(result)
