"""Exhaustive-interleaving semantic oracle for triples.

Every execution of the system is explored breadth first from every pre-state.
A triple is valid when no run faults, breaks a monitored resource invariant
while its lock is free, or blocks, and every terminated run satisfies the
post (spatial part read as ``P * true``, environment part on the completed
history).
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from dvl.assertions import sat_env, sat_spatial_loose, symbolic
from dvl.dsl.printer import cond_str, formula_str
from dvl.dsl.wellformed import atoms_of, formula_vars
from dvl.model import (
    PTR, ActionHistory, Configuration, ContractError, Fault, OccurredAction, System,
    atom_matches, enabled, eval_expr, eval_pure, history_entry, make_configuration, step,
)
from dvl.syntax import (
    ActAtom, And, Cond, Deref, Eventually, InvRef, PointsTo, Prec, Send, TOP, TripleDecl, conj,
    conjuncts,
)

VIOLATIONS = ("post_spatial", "post_env", "resource_invariant", "deadlock", "fault")


class ExplorationError(Exception):
    """The task cannot be explored (infinite domain, unsupported pre)."""


class CorruptCounterexample(Exception):
    pass


@dataclass
class ExplorationTask:
    system: System
    triple: TripleDecl
    max_depth: int = 1000
    max_initial: int = 100_000
    max_states: int = 5_000_000
    invariants: Optional[tuple[str, ...]] = None  # None monitors every resource
    on_event: Optional[Callable[[dict], None]] = None  # receives NDJSON-ready records

    def __post_init__(self):
        if self.max_depth <= 0 or self.max_initial <= 0 or self.max_states <= 0:
            raise ContractError("exploration bounds must be positive")

    @property
    def monitored(self) -> tuple[str, ...]:
        if self.invariants is None:
            return tuple(sorted(self.system.resources))
        return tuple(self.invariants)


@dataclass(frozen=True)
class TraceStep:
    program: str
    edge: int
    digest: Optional[str]  # None for a step that faulted

    def to_json(self) -> dict:
        return {"program": self.program, "edge": self.edge, "digest": self.digest}


@dataclass(frozen=True)
class Counterexample:
    initial: Configuration
    trace: tuple[TraceStep, ...]
    violation: str
    formula: str
    final: Configuration
    message: str = ""
    post: Optional[Cond] = None
    resources: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "violation": self.violation,
            "formula": self.formula,
            "message": self.message,
            "initial": self.initial.to_json(),
            "trace": [s.to_json() for s in self.trace],
            "final": self.final.to_json(),
        }


@dataclass
class Verdict:
    kind: str  # valid | invalid | bound_exceeded
    counterexample: Optional[Counterexample] = None
    stats: dict = field(default_factory=dict)

    def __bool__(self):
        return self.kind == "valid"

    def to_json(self) -> dict:
        out = {"verdict": self.kind, "stats": dict(self.stats)}
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample.to_json()
        return out


# ---------------------------------------------------------------------------
# pre-states


def _domain(system: System, name: str):
    dom = system.domains.get(name)
    if dom is None:
        raise ExplorationError(f"undeclared domain for {name!r}")
    if dom == PTR:
        raise ExplorationError(f"{name!r} has an infinite (pointer) domain")
    return tuple(dom)


def _pre_cells(system: System, spatial) -> list[str]:
    sh = symbolic(spatial, system.resources)
    if sh is not None:
        if any(isinstance(a.loc, Deref) for a in sh.atoms):
            raise ExplorationError("pre-states with heap-allocated cells are not enumerated")
        return sorted({a.loc for a in sh.atoms})
    cells = set()
    for v in formula_vars(spatial):
        if v in system.domains and v not in system.logic:
            cells.add(v)
    return sorted(cells)


def _initialized(system: System) -> dict:
    out = {}
    for u in system.units:
        out.update(u.inits)
    for name, init in system.shared.items():
        if init is not None:
            out[name] = init
    return out


def _seed_atoms(foreign) -> list[ActAtom]:
    return [a for a in conjuncts(foreign) if isinstance(a, ActAtom) and a.kind == "send"]


def enumerate_pre_states(triple: TripleDecl, system: System, limit: Optional[int] = None
                         ) -> Iterator[Configuration]:
    """Initial configurations satisfying the pre (spatial part read as ``P * true``).

    Cells named by the pre's points-to atoms are enumerated over their domains,
    initialized variables always hold their initial value, and logical variables
    range over their domains. Foreign send atoms of the pre are seeded into the
    history and the channel buffers, in order.
    """
    pre = triple.pre
    env, spatial = pre.split()
    cells = _pre_cells(system, spatial)
    inits = _initialized(system)
    logic = sorted(system.logic)
    free_cells = [c for c in cells if c not in inits]
    axes = [_domain(system, n) for n in logic + free_cells]
    seeds = _seed_atoms(pre.foreign)
    starts = list(itertools.product(*[u.initial_locations for u in system.units]))
    count = 0
    for values in itertools.product(*axes):
        store = dict(zip(logic, values[:len(logic)]))
        heap = dict(zip(free_cells, values[len(logic):]))
        try:
            for name, e in inits.items():
                heap[name] = eval_expr(e, store, heap)
        except Fault:
            continue
        if not _pre_holds(system, store, heap, spatial):
            continue
        if not all(_g0(u, store, heap) for u in system.units):
            continue
        hist, buffers = _seed(system, seeds, store, heap)
        if hist is None:
            continue
        if not (sat_env(hist, pre.foreign) and sat_env(hist, env)):
            continue
        for locs in starts:
            count += 1
            if limit is not None and count > limit:
                raise _TooMany()
            yield make_configuration(system, locs, store, heap, buffers, None, hist)


class _TooMany(Exception):
    pass


def _pre_holds(system, store, heap, spatial) -> bool:
    try:
        return sat_spatial_loose(store, heap, spatial, system.resources)
    except Fault:
        return False


def _g0(unit, store, heap) -> bool:
    try:
        return eval_pure(unit.initial_condition, store, heap)
    except Fault:
        return False


def _seed(system: System, seeds, store, heap):
    occurred, buffers = [], {c: () for c in system.channels}
    for k, atom in enumerate(seeds):
        ch = system.channels.get(atom.name)
        if ch is None:
            return None, None
        try:
            value = eval_expr(atom.arg, store, heap)
        except Fault:
            return None, None
        if value not in ch.domain or len(buffers[atom.name]) >= ch.capacity:
            return None, None
        buffers[atom.name] = buffers[atom.name] + (value,)
        occurred.append(OccurredAction("<env>", atom.node, -1, Send(atom.name, atom.arg), None, k,
                                       value))
    return ActionHistory(tuple(occurred)), buffers


# ---------------------------------------------------------------------------
# history monitor: enough of the history to evaluate every env formula


class _Monitor:
    """Tracks which atoms have occurred and which ordered pairs were observed.

    Env formulas are conjunctions of atoms and per-pair precedences, so these
    bits decide every await guard and the env post.
    """

    def __init__(self, formulas):
        atoms, pairs = [], []
        for f in formulas:
            self._walk(f, atoms, pairs)
        self.atoms = list(dict.fromkeys(atoms))
        self.pairs = list(dict.fromkeys(pairs))

    def _walk(self, f, atoms, pairs):
        if isinstance(f, ActAtom):
            atoms.append(f)
        elif isinstance(f, Prec):
            atoms.extend(f.items)
            pairs.extend(zip(f.items, f.items[1:]))
        elif isinstance(f, (And,)):
            self._walk(f.left, atoms, pairs)
            self._walk(f.right, atoms, pairs)
        elif isinstance(f, Eventually):
            self._walk(f.operand, atoms, pairs)

    def initial(self, hist: ActionHistory) -> tuple:
        bits = (frozenset(), frozenset())
        for a in hist.occurred:
            bits = self.advance(bits, a)
        return bits

    def advance(self, bits, occ: OccurredAction) -> tuple:
        seen, pairs = bits
        new_pairs = {p for p in self.pairs if p not in pairs and p[0] in seen
                     and atom_matches(p[1], occ)}
        new_seen = {a for a in self.atoms if a not in seen and atom_matches(a, occ)}
        if not new_pairs and not new_seen:
            return bits
        return seen | new_seen, pairs | new_pairs


# ---------------------------------------------------------------------------
# exploration


def _env_formulas(task: ExplorationTask) -> list:
    out = [task.triple.post.foreign, task.triple.post.native_env]
    for u in task.system.units:
        for e in u.edges:
            if e.await_ is not None:
                out.append(e.await_)
    return out


def _invariant_violated(system: System, config: Configuration, names) -> Optional[str]:
    for r in names:
        if config.locks.get(r) is not None:
            continue
        try:
            ok = sat_spatial_loose(config.store, config.heap, InvRef(r), system.resources)
        except Fault:
            ok = False
        if not ok:
            return r
    return None


def _post_violation(task: ExplorationTask, config: Configuration):
    post = task.triple.post
    env, spatial = post.split()
    try:
        ok = sat_spatial_loose(config.store, config.heap, spatial, task.system.resources)
    except Fault:
        ok = False
    if not ok:
        return "post_spatial", formula_str(spatial)
    phi = conj([post.foreign, env])
    if not sat_env(config.history, phi):
        return "post_env", formula_str(phi)
    return None


def explore(task: ExplorationTask) -> Verdict:
    system = task.system
    monitor = _Monitor(_env_formulas(task))
    emit = task.on_event
    nodes: list = []  # (config, parent, program, edge index)
    seen = set()
    queue = deque()
    stats = {"initial": 0, "states": 0, "transitions": 0, "max_depth": 0, "trimmed": 0}
    try:
        for config in enumerate_pre_states(task.triple, system, task.max_initial):
            stats["initial"] += 1
            key = (config.key(), monitor.initial(config.history))
            if key in seen:
                continue
            seen.add(key)
            nodes.append((config, None, None, None))
            queue.append((len(nodes) - 1, 0, key[1]))
            if emit:
                emit({"type": "initial", "id": len(nodes) - 1, "digest": config.digest(),
                      "config": config.to_json()})
    except _TooMany:
        stats["reason"] = "too many initial states"
        return Verdict("bound_exceeded", None, stats)

    monitored = task.monitored

    def fail(idx, violation, formula, message, final=None, extra=None):
        cex = _counterexample(nodes, idx, violation, formula, message, final, extra, task)
        if emit:
            emit({"type": "violation", **cex.to_json()})
        return Verdict("invalid", cex, stats)

    while queue:
        idx, depth, bits = queue.popleft()
        config = nodes[idx][0]
        stats["states"] += 1
        stats["max_depth"] = max(stats["max_depth"], depth)
        bad = _invariant_violated(system, config, monitored)
        if bad is not None:
            return fail(idx, "resource_invariant", formula_str(system.resources[bad].body),
                        f"resource invariant {bad} broken")
        choices = enabled(config, system)
        if not choices:
            if any(u.outgoing(l) for u, l in zip(system.units, config.locations)):
                return fail(idx, "deadlock", "", "no edge enabled before termination")
            post = _post_violation(task, config)
            if post is not None:
                return fail(idx, post[0], post[1], "post-condition does not hold")
            continue
        if depth >= task.max_depth:
            stats["trimmed"] += 1
            continue
        for prog, edge in choices:
            stats["transitions"] += 1
            try:
                nxt = step(config, (prog, edge), system)
            except Fault as exc:
                return fail(idx, "fault", "", str(exc), extra=(prog, edge.index))
            nbits = monitor.advance(bits, nxt.history.occurred[-1])
            key = (nxt.key(), nbits)
            if emit:
                emit({"type": "step", "from": idx, "program": prog, "edge": edge.index,
                      "digest": nxt.digest(), "new": key not in seen})
            if key in seen:
                continue
            seen.add(key)
            if len(seen) > task.max_states:
                stats["reason"] = "state limit"
                return Verdict("bound_exceeded", None, stats)
            nodes.append((nxt, idx, prog, edge.index))
            queue.append((len(nodes) - 1, depth + 1, nbits))
    if stats["trimmed"]:
        stats["reason"] = "depth cap trimmed the frontier"
        return Verdict("bound_exceeded", None, stats)
    return Verdict("valid", None, stats)


def _counterexample(nodes, idx, violation, formula, message, final, extra, task) -> Counterexample:
    trace = []
    k = idx
    while nodes[k][1] is not None:
        config, parent, prog, edge = nodes[k]
        trace.append(TraceStep(prog, edge, config.digest()))
        k = parent
    trace.reverse()
    last = nodes[idx][0]
    if extra is not None:
        trace.append(TraceStep(extra[0], extra[1], None))
    return Counterexample(nodes[k][0], tuple(trace), violation, formula, final or last, message,
                          task.triple.post, task.monitored)


# ---------------------------------------------------------------------------
# replay and differential agreement


def replay(cex: Counterexample, system: System) -> Configuration:
    """Re-execute a counterexample, checking digests and the recorded violation."""
    config = cex.initial
    for k, s in enumerate(cex.trace):
        try:
            edge = system.unit(s.program).edges[s.edge]
        except (KeyError, IndexError):
            raise CorruptCounterexample(f"step {k}: no edge {s.edge} in {s.program}") from None
        try:
            config = step(config, (s.program, edge), system)
        except Fault:
            if s.digest is None and k == len(cex.trace) - 1 and cex.violation == "fault":
                return config
            raise CorruptCounterexample(f"step {k} faulted unexpectedly") from None
        except ContractError as exc:
            raise CorruptCounterexample(f"step {k}: {exc}") from None
        if config.digest() != s.digest:
            raise CorruptCounterexample(f"step {k}: digest mismatch")
    if not _reproduces(cex, system, config):
        raise CorruptCounterexample(f"replay does not reach a {cex.violation} violation")
    return config


def _reproduces(cex: Counterexample, system: System, config: Configuration) -> bool:
    v = cex.violation
    if v == "resource_invariant":
        return _invariant_violated(system, config, cex.resources) is not None
    if v == "fault":
        return False  # the faulting step must be the last trace entry
    blocked = not enabled(config, system)
    running = any(u.outgoing(l) for u, l in zip(system.units, config.locations))
    if v == "deadlock":
        return blocked and running
    if not blocked or running or cex.post is None:
        return False
    task = ExplorationTask(system, TripleDecl(Cond(), None, cex.post))
    got = _post_violation(task, config)
    return got is not None and got[0] == v


@dataclass(frozen=True)
class Agreement:
    checker: str
    explorer: str
    fatal: bool
    note: str

    def to_json(self) -> dict:
        return {"checker": self.checker, "explorer": self.explorer, "fatal": self.fatal,
                "note": self.note}


def validate_report(check, task: ExplorationTask, verdict: Optional[Verdict] = None) -> Agreement:
    """Compare a checker verdict with the explorer's; only verified/invalid is fatal."""
    verdict = verdict if verdict is not None else explore(task)
    fatal = check.verdict == "verified" and verdict.kind == "invalid"
    if fatal:
        note = "unsound: checker verified a triple the explorer refutes"
    elif check.verdict == verdict_map(verdict.kind):
        note = "agree"
    else:
        note = "acceptable incompleteness"
    return Agreement(check.verdict, verdict.kind, fatal, note)


def verdict_map(kind: str) -> str:
    return {"valid": "verified", "invalid": "refuted"}.get(kind, "unknown")


def task_for_outline(outline, lowered, **kw) -> ExplorationTask:
    """Exploration task for an outline's target over the programs it names."""
    from dvl.dsl.wellformed import code_programs

    programs = [n for n, _ in code_programs(outline.target.code)]
    return ExplorationTask(lowered.system(programs), outline.target, **kw)


def cond_text(c: Cond) -> str:
    return cond_str(c)
