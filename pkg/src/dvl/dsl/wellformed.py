from __future__ import annotations

from dvl.dsl.parser import ParseDiagnostic
from dvl.syntax import (
    ActAtom, Acquire, Alloc, And, Assign, BinOp, BoolConst, Cmp, Const, Deref, Emp,
    EnumDom, Eventually, Free, InvRef, Load, NamedDom, Neg, NodePar, Not, Or, Par,
    Placed, PointsTo, Prec, ProgRef, PtrDom, RangeDom, Recv, Release, Send,
    SourceModel, Span, Star, Store, Var, Skip,
)

DEFAULT_NODE = "main"
BUILTIN_DOMAINS = {"bool": (0, 1), "int": (0, 3)}


def expr_vars(e) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return expr_vars(e.operand)
    if isinstance(e, BinOp):
        return expr_vars(e.left) | expr_vars(e.right)
    return set()


def formula_vars(f) -> set[str]:
    """Variables read by a formula (points-to locations by name included)."""
    if isinstance(f, Cmp):
        return expr_vars(f.left) | expr_vars(f.right)
    if isinstance(f, (Not, Eventually)):
        return formula_vars(f.operand)
    if isinstance(f, (And, Or, Star)):
        return formula_vars(f.left) | formula_vars(f.right)
    if isinstance(f, PointsTo):
        out = set() if f.value is None else expr_vars(f.value)
        if isinstance(f.loc, str):
            out.add(f.loc)
        else:
            out |= expr_vars(f.loc.addr)
        return out
    if isinstance(f, ActAtom):
        if f.kind == "send":
            return expr_vars(f.arg)
        if f.kind == "recv":
            return {f.arg}
        return set()
    if isinstance(f, Prec):
        out = set()
        for a in f.items:
            out |= formula_vars(a)
        return out
    return set()


def is_pure(f) -> bool:
    if isinstance(f, (BoolConst, Cmp)):
        return True
    if isinstance(f, Not):
        return is_pure(f.operand)
    if isinstance(f, (And, Or)):
        return is_pure(f.left) and is_pure(f.right)
    return False


def is_env_formula(f) -> bool:
    if isinstance(f, (ActAtom, Prec)) or f == BoolConst(True):
        return True
    if isinstance(f, Eventually):
        return is_env_formula(f.operand)
    if isinstance(f, And):
        return is_env_formula(f.left) and is_env_formula(f.right)
    return False


def atoms_of(f) -> list[ActAtom]:
    if isinstance(f, ActAtom):
        return [f]
    if isinstance(f, Prec):
        return list(f.items)
    if isinstance(f, (Eventually, Not)):
        return atoms_of(f.operand)
    if isinstance(f, (And, Or, Star)):
        return atoms_of(f.left) + atoms_of(f.right)
    return []


def action_reads(a) -> set[str]:
    if isinstance(a, (Assign, Send, Alloc)):
        return expr_vars(a.expr)
    if isinstance(a, Load):
        return expr_vars(a.addr)
    if isinstance(a, Store):
        return expr_vars(a.addr) | expr_vars(a.expr)
    if isinstance(a, Free):
        return expr_vars(a.addr)
    return set()


def action_writes(a) -> set[str]:
    if isinstance(a, (Assign, Alloc, Load)):
        return {a.var}
    if isinstance(a, Recv):
        return {a.var}
    return set()


def code_programs(c) -> list[tuple[str, str | None]]:
    if isinstance(c, ProgRef):
        return [(c.name, c.node)]
    if isinstance(c, Placed):
        return [(n, c.node) for n, _ in code_programs(c.code)]
    if isinstance(c, (Par, NodePar)):
        out = []
        for p in c.parts:
            out += code_programs(p)
        return out
    return []


class _Checker:
    def __init__(self, model: SourceModel):
        self.m = model
        self.diags: list[ParseDiagnostic] = []

    def err(self, code: str, message: str, span: Span):
        self.diags.append(ParseDiagnostic("error", span, message, code))

    def warn(self, code: str, message: str, span: Span):
        self.diags.append(ParseDiagnostic("warning", span, message, code))

    def unique(self, items, kind: str):
        seen = set()
        for name, span in items:
            if name in seen:
                self.err("DUPLICATE_ID", f"duplicate {kind} {name!r}", span)
            seen.add(name)

    def resolve_dom(self, d, span: Span):
        """Return a finite value tuple, the string 'ptr', or None after an error."""
        if isinstance(d, PtrDom):
            return "ptr"
        if isinstance(d, RangeDom):
            if d.lo > d.hi:
                self.err("BAD_DOMAIN", f"empty range {d.lo}..{d.hi}", span)
                return None
            return tuple(range(d.lo, d.hi + 1))
        if isinstance(d, EnumDom):
            if len(set(d.values)) != len(d.values):
                self.err("BAD_DOMAIN", "repeated value in enumeration", span)
                return None
            return tuple(d.values)
        if isinstance(d, NamedDom):
            if d.name in self.types:
                return self.types[d.name]
            if d.name in BUILTIN_DOMAINS:
                lo, hi = BUILTIN_DOMAINS[d.name]
                return tuple(range(lo, hi + 1))
            self.err("UNDECLARED_TYPE", f"undeclared type {d.name!r}", span)
        return None

    def run(self) -> list[ParseDiagnostic]:
        m = self.m
        self.types = {}
        self.unique([(t.name, t.span) for t in m.types], "type")
        for t in m.types:
            dom = self.resolve_dom(t.dom, t.span)
            if dom == "ptr":
                self.err("BAD_DOMAIN", "type aliases must be finite value domains", t.span)
            elif dom is not None:
                self.types[t.name] = dom

        self.unique([(c.name, c.span) for c in m.channels], "channel")
        self.channels = {}
        for c in m.channels:
            if c.capacity < 1:
                self.err("BAD_CAPACITY", f"channel {c.name!r} needs capacity >= 1", c.span)
            dom = self.resolve_dom(c.domain, c.span)
            if dom == "ptr":
                self.err("BAD_DOMAIN", "channel domains must be finite value domains", c.span)
                dom = None
            self.channels[c.name] = dom

        programs = [(p, n.name) for n in m.nodes for p in n.programs]
        programs += [(p, DEFAULT_NODE) for p in m.programs]
        self.unique([(n.name, n.span) for n in m.nodes], "node")
        if m.programs and any(n.name == DEFAULT_NODE for n in m.nodes):
            self.err("DUPLICATE_ID", f"node name {DEFAULT_NODE!r} is reserved for top-level programs",
                     next(n.span for n in m.nodes if n.name == DEFAULT_NODE))
        self.unique([(p.name, p.span) for p, _ in programs], "program")
        self.nodes = {n.name for n in m.nodes} | ({DEFAULT_NODE} if m.programs else set())
        self.programs = {p.name: p for p, _ in programs}

        # one global variable namespace: logic, shared and program-local variables
        var_items = [(v.name, v.span) for v in m.logic] + [(v.name, v.span) for v in m.shared]
        var_items += [(v.name, v.span) for p, _ in programs for v in p.vars]
        self.unique(var_items, "variable")
        self.vardoms = {}
        for v in list(m.logic) + list(m.shared) + [v for p, _ in programs for v in p.vars]:
            self.vardoms[v.name] = self.resolve_dom(v.dom, v.span)
        self.logic = {v.name for v in m.logic}
        self.shared = {v.name for v in m.shared}
        for v in m.logic:
            if self.vardoms.get(v.name) == "ptr":
                self.err("BAD_DOMAIN", "logical variables need finite domains", v.span)

        self.unique([(r.name, r.span) for r in m.invariants], "invariant")
        self.invariants = {r.name: r for r in m.invariants}
        for r in m.invariants:
            for cell in r.footprint:
                if cell not in self.shared:
                    self.err("UNDECLARED_VAR", f"invariant footprint {cell!r} is not a shared variable", r.span)
            if not is_pure(r.body):
                self.err("BAD_ASSERTION", "resource invariant bodies must be pure over the footprint", r.span)
            for name in formula_vars(r.body) - set(r.footprint) - self.logic:
                self.err("UNDECLARED_VAR", f"invariant reads {name!r} outside its footprint", r.span)

        for v in m.shared:
            self.check_init(v, self.shared | self.logic)
        for p, _ in programs:
            self.check_program(p)
        self.unique([(o.name, o.span) for o in m.outlines], "outline")
        labels = {e.label for p, _ in programs for l in p.locs for e in l.edges if e.label}
        self.labels = labels
        for o in m.outlines:
            self.check_outline(o)
        return self.diags

    def check_init(self, v, visible):
        if v.init is not None:
            for name in expr_vars(v.init) - visible:
                self.err("UNDECLARED_VAR", f"initializer reads undeclared or invisible {name!r}", v.span)

    def check_program(self, p):
        own = {v.name for v in p.vars}
        visible = own | self.shared
        for v in p.vars:
            self.check_init(v, visible | self.logic)
        locs = {}
        for loc in p.locs:
            if loc.name in locs:
                self.err("DUPLICATE_ID", f"duplicate location {loc.name!r} in program {p.name!r}", loc.span)
            locs[loc.name] = loc
        if not p.locs:
            self.err("EMPTY_PROGRAM", f"program {p.name!r} has no locations", p.span)
        for s in p.start:
            if s not in locs:
                self.err("UNDECLARED_LOCATION", f"start location {s!r} not in program {p.name!r}", p.span)
        if p.init is not None:
            if not is_pure(p.init):
                self.err("BAD_GUARD", "initial condition must be a boolean condition", p.span)
            for name in formula_vars(p.init) - visible:
                self.err("UNDECLARED_VAR", f"initial condition reads {name!r}", p.span)
        for loc in p.locs:
            for e in loc.edges:
                self.check_edge(p, e, locs, visible)

    def check_edge(self, p, e, locs, visible):
        if e.target not in locs:
            self.err("UNDECLARED_LOCATION", f"edge target {e.target!r} not in program {p.name!r}", e.span)
        if not is_pure(e.guard):
            self.err("BAD_GUARD", "guards must be boolean combinations of comparisons", e.span)
        for name in formula_vars(e.guard) - visible:
            self.err("UNDECLARED_VAR", f"guard reads undeclared or invisible variable {name!r}", e.span)
        if e.await_ is not None:
            if not is_env_formula(e.await_):
                self.err("BAD_AWAIT", "await conditions must be environment factors", e.span)
            self.check_atoms(e.await_, e.span)
        a = e.action
        for name in (action_reads(a) | action_writes(a)) - visible:
            self.err("UNDECLARED_VAR", f"action uses undeclared or invisible variable {name!r}", e.span)
        if isinstance(a, (Send, Recv)):
            if a.channel not in self.channels:
                self.err("UNDECLARED_CHANNEL", f"undeclared channel {a.channel!r}", e.span)
            elif isinstance(a, Recv):
                cdom, vdom = self.channels[a.channel], self.vardoms.get(a.var)
                if cdom is not None and isinstance(vdom, tuple) and not set(cdom) <= set(vdom):
                    self.err("DOMAIN_MISMATCH",
                             f"Dom({a.var}) does not include Dom({a.channel})", e.span)
        if isinstance(a, (Acquire, Release)) and a.resource not in self.invariants:
            self.err("UNDECLARED_RESOURCE", f"undeclared resource {a.resource!r}", e.span)
        if isinstance(a, (Alloc, Load)) and isinstance(a, Alloc) and self.vardoms.get(a.var) != "ptr":
            self.err("DOMAIN_MISMATCH", f"alloc target {a.var!r} must have domain ptr", e.span)

    def check_atoms(self, f, span):
        for atom in atoms_of(f):
            if atom.kind in ("send", "recv") and atom.name not in self.channels:
                self.err("UNDECLARED_CHANNEL", f"undeclared channel {atom.name!r}", span)
            if atom.node is not None and atom.node not in self.nodes:
                self.err("UNDECLARED_NODE", f"undeclared node {atom.node!r}", span)

    def check_formula(self, f, span):
        self.check_atoms(f, span)
        known = set(self.vardoms)
        for name in formula_vars(f) - known:
            self.err("UNDECLARED_VAR", f"assertion mentions undeclared variable {name!r}", span)
        for ref in _invrefs(f):
            if ref not in self.invariants:
                self.err("UNDECLARED_RESOURCE", f"unknown invariant {ref!r}", span)
        for atom in atoms_of(f):
            if atom.kind == "label" and atom.name not in self.labels:
                self.warn("UNKNOWN_LABEL", f"no edge carries label {atom.name!r}", span)

    def check_cond(self, c, span):
        if not is_env_formula(c.foreign):
            self.err("BAD_ASSERTION", "foreign factors must be environment formulas", span)
        self.check_formula(c.foreign, span)
        self.check_formula(c.native, span)

    def check_outline(self, o):
        t = o.target
        self.check_cond(t.pre, o.span)
        self.check_cond(t.post, o.span)
        for name, node in code_programs(t.code):
            if name not in self.programs:
                self.err("UNDECLARED_PROGRAM", f"outline code names unknown program {name!r}", o.span)
            if node is not None and node not in self.nodes:
                self.err("UNDECLARED_NODE", f"undeclared node {node!r}", o.span)
        for ch, f in o.payloads:
            if ch not in self.channels:
                self.err("UNDECLARED_CHANNEL", f"payload for undeclared channel {ch!r}", o.span)
            self.check_formula(f, o.span)
        self.check_step(o.proof)

    def check_step(self, s):
        span = s.span
        if s.rule in ("axiom", "seq"):
            p = self.programs.get(s.program)
            if p is None:
                self.err("UNDECLARED_PROGRAM", f"unknown program {s.program!r}", span)
            else:
                names = {l.name for l in p.locs}
                for loc, _ in s.at:
                    if loc not in names:
                        self.err("UNDECLARED_LOCATION", f"{loc!r} is not a location of {p.name!r}", span)
        if s.rule == "nodeenv" and s.node not in self.nodes:
            self.err("UNDECLARED_NODE", f"undeclared node {s.node!r}", span)
        for c in [s.pre, s.post] + [c for _, c in s.at]:
            if c is not None:
                self.check_cond(c, span)
        if s.frame is not None:
            self.check_formula(s.frame, span)
        for p in s.premises:
            self.check_step(p)


def _invrefs(f) -> list[str]:
    if isinstance(f, InvRef):
        return [f.name]
    if isinstance(f, (Not, Eventually)):
        return _invrefs(f.operand)
    if isinstance(f, (And, Or, Star)):
        return _invrefs(f.left) + _invrefs(f.right)
    return []


def check_wellformed(model: SourceModel) -> list[ParseDiagnostic]:
    return _Checker(model).run()
