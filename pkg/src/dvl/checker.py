"""Proof-outline checker.

A proof outline is a tree of rule applications. Leaves (``axiom``, ``seq``)
are checked per program by :mod:`dvl.proof.local`; inner nodes apply the
consequence, frame, environment-composition, node-environment-composition and
node-composition rules. After the tree, global side conditions
(:mod:`dvl.proof.hb`) make sure the eliminated foreign conditions really are
provided by the network. Obligations are visited depth first in premise
order, each rule's own obligations before its premises.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from dvl.assertions import big_star, env_entails, env_requirements, symbolic
from dvl.dsl.lower import Lowered
from dvl.dsl.printer import code_str, cond_str, formula_str
from dvl.dsl.wellformed import atoms_of, code_programs, formula_vars
from dvl.model import ProgramUnit, Edge
from dvl.proof.base import Abort, Failure, Session, Stats, footprint, star_conds
from dvl.proof.hb import GlobalCheck, check_existence, check_resources
from dvl.proof.local import ProgramProof, check_program
from dvl.syntax import (
    Acquire, ActAtom, ActionCode, Alloc, Assign, BoolConst, Cmp, Cond, Emp, Load, NodePar, Par, Placed,
    PointsTo,
    Prec, ProgRef, ProofOutlineDecl, Recv, Release, Star, StepDecl, TOP, TripleDecl, conj,
    Var, conjuncts,
)

Triple = TripleDecl
ProofOutline = ProofOutlineDecl

RULE_NAMES = {
    "axiom": "EffectAxiom", "seq": "Sequencing", "consequence": "Consequence", "frame": "Frame",
    "envcomp": "EnvComposition", "nodeenv": "NodeEnvComposition", "nodecomp": "NodeComposition",
}


@dataclass
class CheckReport:
    verdict: str  # verified | refuted | unknown
    failing_obligation: Optional[Failure] = None
    stats: Stats = field(default_factory=Stats)
    outline: str = ""
    conclusion: Optional[Triple] = None
    steps: list = field(default_factory=list)  # (path, rule, Triple)
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = {"outline": self.outline, "verdict": self.verdict, "stats": self.stats.to_json()}
        if self.failing_obligation is not None:
            out["failing_obligation"] = self.failing_obligation.to_json()
        if self.conclusion is not None:
            out["conclusion"] = _triple_json(self.conclusion)
        return out

    def step(self, path: str) -> Triple:
        for p, _, t in self.steps:
            if p == path:
                return t
        raise KeyError(path)


def _triple_json(t: Triple) -> dict:
    return {"pre": cond_str(t.pre), "code": code_str(t.code), "post": cond_str(t.post)}


def triple_text(t: Triple) -> str:
    return f"{cond_str(t.pre)} {code_str(t.code)} {cond_str(t.post)}"


# ---------------------------------------------------------------------------
# foreign-condition discharge


def _requirements(f):
    try:
        return env_requirements(f)
    except (TypeError, ValueError):
        return None


def foreign_items(t: Triple) -> list:
    """Atoms and precedence pairs required by a triple's foreign factors."""
    req = _requirements(conj(conjuncts(t.pre.foreign) + conjuncts(t.post.foreign)))
    if req is None:
        return []
    atoms, pairs = req
    return sorted(atoms, key=repr) + [Prec(p) for p in sorted(pairs, key=repr)]


def _cross_node(item, node) -> bool:
    atoms = item.items if isinstance(item, Prec) else (item,)
    return any(a.node is not None and a.node != node for a in atoms)


def discharge(premises: list, node: Optional[str] = None) -> tuple[list, list]:
    """Split the premises' foreign items into (retained, undischarged).

    An atom is discharged when a sibling's native post provides it; a
    precedence pair when the natives together provide it, or when it orders
    a sibling's send before a receive on the same channel. With ``node``
    given, undischarged items placed on other nodes are retained.
    """
    natives = [t.post.native_env for t in premises]
    everything = conj(natives)
    retained, missing = [], []
    for i, t in enumerate(premises):
        for item in foreign_items(t):
            others = [n for j, n in enumerate(natives) if j != i]
            if isinstance(item, ActAtom):
                ok = any(env_entails(n, item)[0] for n in others)
            else:
                ok = env_entails(everything, item)[0]
                if not ok:
                    a, b = item.items
                    ok = (a.kind == "send" and b.kind == "recv" and a.name == b.name
                          and any(env_entails(n, a)[0] for n in others)
                          and env_entails(everything, b)[0])
            if ok:
                continue
            if node is not None and _cross_node(item, node):
                if item not in retained:
                    retained.append(item)
            else:
                missing.append((i, item))
    return retained, missing


def _item_str(item) -> str:
    return formula_str(item)


# ---------------------------------------------------------------------------
# the tree walker


class _Walker:
    def __init__(self, lowered: Lowered, session: Session):
        self.low = lowered
        self.s = session
        self.proofs: dict[str, ProgramProof] = {}
        self.steps: list = []
        self.owner = {p: b.node for b in lowered.bindings for p in b.programs}

    # conclusion triples, computed without checking

    def triple(self, st: StepDecl) -> Triple:
        if st.rule in ("axiom", "seq"):
            unit = self.low_unit(st.program)
            ann = self.annotation(st, unit)
            start = unit.initial_locations[0]
            finals = unit.final_locations
            post = ann.get(finals[0], Cond()) if finals else Cond()
            return Triple(ann.get(start, Cond()), ProgRef(unit.name, None), post)
        if st.rule == "consequence":
            p = self.triple(st.premises[0])
            return Triple(st.pre, p.code, st.post)
        if st.rule == "frame":
            p = self.triple(st.premises[0])
            return Triple(_star(p.pre, st.frame), p.code, _star(p.post, st.frame))
        prem = [self.triple(p) for p in st.premises]
        node = st.node if st.rule == "nodeenv" else None
        retained, _ = discharge(prem, node)
        gamma = conj(retained) if st.rule == "nodeenv" else TOP
        if st.rule == "nodeenv":
            code = Placed(Par(tuple(_flat(p.code) for p in prem)), st.node)
        elif st.rule == "nodecomp":
            code = NodePar(tuple(p.code for p in prem))
        else:
            code = Par(tuple(p.code for p in prem))
        if st.pre is not None:
            return Triple(st.pre, code, st.post)
        return Triple(star_conds([p.pre for p in prem], gamma), code,
                      star_conds([p.post for p in prem], gamma))

    def low_unit(self, name) -> ProgramUnit:
        for u in self.low.units:
            if u.name == name:
                return u
        raise KeyError(name)

    def annotation(self, st: StepDecl, unit: ProgramUnit) -> dict:
        if st.rule == "seq":
            return dict(st.at)
        ann = {}
        if len(unit.edges) == 1:
            e = unit.edges[0]
            ann[e.source], ann[e.target] = st.pre, st.post
        return ann

    # checking

    def check(self, st: StepDecl, path: str) -> Triple:
        t = self.triple(st)
        self.steps.append((path, RULE_NAMES[st.rule], t))
        rule = RULE_NAMES[st.rule]
        if st.rule in ("axiom", "seq"):
            unit = self.low_unit(st.program)
            if st.rule == "axiom" and len(unit.edges) != 1:
                self.s.fail("refuted", rule, path,
                            f"{unit.name}: the effect axiom applies to single-action programs")
            if unit.name in self.proofs:
                self.s.fail("refuted", rule, path, f"{unit.name} is proved twice in the outline")
            node = self.owner.get(unit.name)
            proof = check_program(unit, node, self.annotation(st, unit), self.s, path, rule)
            if proof is not None:
                self.proofs[unit.name] = proof
            return t
        prem_steps = list(st.premises)
        prem = [self.triple(p) for p in prem_steps]
        if st.rule == "consequence":
            p = prem[0]
            self._entails_cond(st.pre, p.pre, rule, path, "conclusion pre must entail premise pre")
            self._entails_cond(p.post, st.post, rule, path,
                               "premise post must entail conclusion post")
        elif st.rule == "frame":
            self._frame(st, prem[0], rule, path)
        else:
            self._compose(st, prem, t, rule, path)
        for k, p in enumerate(prem_steps):
            self.check(p, f"{path}/{k}")
        return t

    def _entails_cond(self, p: Cond, q: Cond, rule, path, what, premise=None):
        pe, ps = p.split()
        qe, qs = q.split()
        return self.s.entails((conj([p.foreign, pe]), ps), (conj([q.foreign, qe]), qs),
                              rule=rule, path=path, what=what, premise=premise)

    def _frame(self, st, p: Triple, rule, path):
        self.s.obligation()
        progs = [n for n, _ in code_programs(p.code)]
        mods = set()
        for name in progs:
            mods |= self.low_unit(name).writes()
        clash = sorted(mods & formula_vars(st.frame))
        if clash:
            self.s.fail("refuted", rule, path, f"frame mentions modified variables {clash}",
                        triple_text(p))
            return
        fp = footprint(st.frame, self.s.resources)
        for c in (p.pre, p.post):
            overlap = fp & footprint(c.spatial, self.s.resources)
            if overlap:
                self.s.fail("refuted", rule, path, f"frame overlaps the premise on {sorted(overlap)}",
                            triple_text(p))
                return

    def _compose(self, st, prem: list, t: Triple, rule, path):
        s = self.s
        s.obligation()
        nodes = []
        for p in prem:
            progs = [n for n, _ in code_programs(p.code)]
            nodes.append({self.owner.get(n) for n in progs})
        if st.rule == "nodeenv":
            off = [sorted(n) for n in nodes if n != {st.node}]
            if off:
                s.fail("refuted", rule, path, f"premises not placed on node {st.node}: {off}")
                return
        elif st.rule == "envcomp":
            every = set().union(*nodes) if nodes else set()
            if len(every) > 1:
                s.fail("refuted", rule, path,
                       f"program-level composition spans nodes {sorted(every)}; use node rules")
                return
        else:
            seen = set()
            for n in nodes:
                if n & seen:
                    s.fail("refuted", rule, path, f"node premises overlap on {sorted(n & seen)}")
                    return
                seen |= n
        # separation of the premises' conditions
        for which in ("pre", "post"):
            owner = {}
            for i, p in enumerate(prem):
                for c in footprint(getattr(p, which).spatial, s.resources):
                    if c in owner:
                        s.fail("refuted", rule, path,
                               f"premises {owner[c]} and {i} both claim {c} in their {which}: "
                               "the separating conjunction is undefined",
                               triple_text(prem[i]))
                        return
                    owner[c] = i
        retained, missing = discharge(prem, st.node if st.rule == "nodeenv" else None)
        gamma = conj(retained) if st.rule == "nodeenv" else TOP
        for i, item in missing:
            s.obligation()
            if st.pre is not None and st.rule != "nodeenv" and \
                    env_entails(st.pre.foreign, item)[0]:
                continue
            s.fail("refuted", rule, path,
                   f"foreign condition {_item_str(item)} of premise {i} is not discharged",
                   triple_text(prem[i]))
            return
        if st.pre is None:
            return
        if st.rule == "nodeenv":
            for c, label in ((t.pre, "pre"), (t.post, "post")):
                s.obligation()
                if not (env_entails(c.foreign, gamma)[0] and env_entails(gamma, c.foreign)[0]):
                    s.fail("refuted", rule, path,
                           f"conclusion {label} foreign condition {formula_str(c.foreign)} differs "
                           f"from the retained cross-node conditions {formula_str(gamma)}")
                    return
        composed_pre = star_conds([p.pre for p in prem])
        composed_post = star_conds([p.post for p in prem])
        pe, ps = t.pre.split()
        ce, cs = composed_pre.split()
        self.s.entails((conj([t.pre.foreign, pe]), ps), (ce, cs), rule=rule, path=path,
                       what="conclusion pre must entail the composed premise pres")
        ce, cs = composed_post.split()
        qe, qs = t.post.split()
        self.s.entails((conj([gamma, ce]), cs), (conj([t.post.foreign, qe]), qs), rule=rule,
                       path=path, what="composed premise posts must entail the conclusion post")


def _flat(code):
    if isinstance(code, Par) and len(code.parts) == 1:
        return code.parts[0]
    return code


def _star(c: Cond, frame) -> Cond:
    env, sp = c.split()
    spatial = frame if sp == TOP else Star(sp, frame)
    return Cond.of(c.foreign, env, spatial)


def _writes(units) -> set:
    out = set()
    for u in units:
        out |= u.writes()
    return out


def make_session(lowered: Lowered, programs, payloads=()) -> Session:
    units = [u for u in lowered.units if u.name in set(programs)]
    writes = _writes(units)
    cells = {n for n in lowered.domains if n not in set(lowered.logic)}
    locks = {e.action.resource for u in units for e in u.edges
             if isinstance(e.action, (Acquire, Release))}
    return Session(
        domains=dict(lowered.domains), logic=frozenset(lowered.logic),
        resources=dict(lowered.resources), channels=dict(lowered.channels),
        payloads=dict(payloads), immutable=frozenset(cells - writes),
        lock_protected=frozenset(locks))


def check_outline(outline: ProofOutline, lowered: Lowered, *, all_failures: bool = False
                  ) -> CheckReport:
    """Check one outline against the lowered model it was written for."""
    target = outline.target
    programs = [n for n, _ in code_programs(target.code)]
    session = make_session(lowered, programs, outline.payloads)
    session.stop_at_first = not all_failures
    walker = _Walker(lowered, session)
    conclusion = None
    try:
        for name in programs:
            walker.low_unit(name)
        conclusion = walker.check(outline.proof, "root")
        _root(walker, session, target, conclusion, programs)
    except Abort:
        pass
    except KeyError as exc:
        session.failures.append(Failure("refuted", "outline", "root", f"unknown program {exc}"))
    return _report(outline.name, session, conclusion, walker.steps)


def _root(walker: _Walker, s: Session, target: Triple, root: Triple, programs):
    covered = set(walker.proofs)
    leaves = {n for n, _ in code_programs(root.code)}
    if leaves != set(programs):
        s.fail("refuted", "outline", "root",
               f"proof tree covers {sorted(leaves)} but the target runs {sorted(programs)}")
        return
    for name, node in code_programs(target.code):
        if node is not None and walker.owner.get(name) != node:
            s.fail("refuted", "outline", "root", f"{name} is not placed on node {node}")
            return
    if root != target:
        # cells of the target pre that no program claims form a frame: nobody
        # may write them, so they carry over to the post unchanged
        pre = _with_inits(target.pre, walker, programs, s)
        walker._entails_cond(pre, _loose(root.pre), "outline", "root",
                             "target pre must entail the proved pre")
        walker._entails_cond(_star(root.post, _frame_of(pre, root.pre, s)), _loose(target.post),
                             "outline", "root", "proved post must entail the target post")
    if covered != set(programs):
        return  # an unknown leaf; global conditions need every program
    units = [walker.low_unit(n) for n in programs]
    seeds = [a for a in conjuncts(target.pre.foreign)
             if isinstance(a, ActAtom) and a.kind == "send"]
    if not GlobalCheck(s, walker.proofs, units, walker.owner, seeds).run():
        return
    initialized = set()
    for u in units:
        initialized |= set(u.inits)
    initialized |= {n for n, v in walker.low.shared.items() if v is not None}
    if not check_resources(s, walker.proofs, target.pre):
        return
    check_existence(s, walker.proofs, target.pre, initialized)


def _frame_of(pre: Cond, claimed: Cond, s: Session):
    """Points-to atoms of ``pre`` for cells ``claimed`` leaves alone, with the
    pure facts that only mention those cells and logical variables."""
    sh = symbolic(pre.spatial, s.resources)
    if sh is None:
        return Emp()
    taken = footprint(claimed.spatial, s.resources)
    atoms = [a for a in sh.atoms if isinstance(a.loc, str) and a.loc not in taken]
    cells = {a.loc for a in atoms}
    pure = [c for c in conjuncts(sh.pure) if formula_vars(c) <= cells | set(s.logic)]
    return conj(pure + [big_star(atoms)]) if atoms else Emp()


def _loose(c: Cond) -> Cond:
    env, sp = c.split()
    return Cond.of(c.foreign, env, Star(sp, TOP))


def _with_inits(pre: Cond, walker: _Walker, programs, s: Session) -> Cond:
    """The pre together with the cells that declarations allocate and initialize."""
    have = footprint(pre.spatial, s.resources)
    inits = {}
    for name in programs:
        inits.update(walker.low_unit(name).inits)
    inits.update({n: v for n, v in walker.low.shared.items() if v is not None})
    extra = [PointsTo(n, e) for n, e in sorted(inits.items()) if n not in have]
    # a claimed cell still starts at its declared value
    known = [Cmp("==", Var(n), e) for n, e in sorted(inits.items()) if n in have]
    if not extra and not known:
        return pre
    env, sp = pre.split()
    sp = big_star(([] if sp == TOP else [sp]) + extra)
    return Cond.of(pre.foreign, env, conj(known + [sp]))


def _report(name, session: Session, conclusion, steps) -> CheckReport:
    refuted = [f for f in session.failures if f.verdict == "refuted"]
    unknown = [f for f in session.failures if f.verdict == "unknown"]
    if refuted:
        return CheckReport("refuted", refuted[0], session.stats, name, conclusion, steps)
    if unknown:
        return CheckReport("unknown", unknown[0], session.stats, name, conclusion, steps)
    return CheckReport("verified", None, session.stats, name, conclusion, steps)


# ---------------------------------------------------------------------------
# rule-level entry points over explicit triples


@dataclass(frozen=True)
class ObligationVerdict:
    verdict: str
    failure: Optional[Failure] = None
    conclusion: Optional[Triple] = None

    def __bool__(self):
        return self.verdict == "verified"


def _single(session: Session, fn) -> ObligationVerdict:
    try:
        out = fn()
    except Abort:
        out = None
    refuted = [f for f in session.failures if f.verdict == "refuted"]
    unknown = [f for f in session.failures if f.verdict == "unknown"]
    if refuted:
        return ObligationVerdict("refuted", refuted[0], out)
    if unknown:
        return ObligationVerdict("unknown", unknown[0], out)
    return ObligationVerdict("verified", None, out)


def check_axiom(t: Triple, lowered: Lowered, node: Optional[str] = None) -> ObligationVerdict:
    """Check a single-action triple (``<action>`` code or a one-edge program)."""
    if isinstance(t.code, ActionCode):
        action = t.code.action
        unit = ProgramUnit("<axiom>", ("l0", "l1"),
                           (Edge("<axiom>", 0, "l0", BoolConst(True), action, "l1"),), ("l0",),
                           variables={})
        node = t.code.node or node
    else:
        unit = next(u for u in lowered.units if u.name == t.code.name)
    session = make_session(lowered, [u.name for u in lowered.units])
    ann = {unit.edges[0].source: t.pre, unit.edges[0].target: t.post}

    def run():
        proof = check_program(unit, node or "main", ann, session, "axiom", "EffectAxiom")
        return t if proof is not None else None

    return _single(session, run)


def _compose_rule(rule: str, premises, conclusion: Triple, lowered: Lowered, node=None):
    programs = [n for p in premises for n, _ in code_programs(p.code)]
    session = make_session(lowered, programs)
    walker = _Walker(lowered, session)
    st = StepDecl(rule, node=node, pre=conclusion.pre if conclusion else None,
                  post=conclusion.post if conclusion else None)
    prem = list(premises)

    def run():
        if conclusion is None:
            retained, _ = discharge(prem, node if rule == "nodeenv" else None)
            gamma = conj(retained) if rule == "nodeenv" else TOP
            t = Triple(star_conds([p.pre for p in prem], gamma), Par(tuple(p.code for p in prem)),
                       star_conds([p.post for p in prem], gamma))
        else:
            t = conclusion
        walker._compose(st, prem, t, RULE_NAMES[rule], "root")
        return t

    return _single(session, run)


def check_env_composition(premises, conclusion: Optional[Triple], lowered: Lowered):
    """Environment Composition Rule over already-established premise triples."""
    return _compose_rule("envcomp", premises, conclusion, lowered)


def check_node_env_composition(premises, conclusion: Optional[Triple], lowered: Lowered,
                               node: str):
    """Node Environment Composition Rule; the conclusion keeps cross-node conditions."""
    return _compose_rule("nodeenv", premises, conclusion, lowered, node)


def check_node_composition(premises, conclusion: Optional[Triple], lowered: Lowered):
    """Node Composition Rule over one premise per node."""
    return _compose_rule("nodecomp", premises, conclusion, lowered)


def check_frame(premise: Triple, frame, conclusion: Optional[Triple], lowered: Lowered):
    """Frame rule: the frame must not mention variables the premise code modifies."""
    programs = [n for n, _ in code_programs(premise.code)]
    session = make_session(lowered, programs)
    walker = _Walker(lowered, session)

    def run():
        st = StepDecl("frame", frame=frame)
        walker._frame(st, premise, "Frame", "root")
        t = Triple(_star(premise.pre, frame), premise.code, _star(premise.post, frame))
        if conclusion is not None:
            walker._entails_cond(conclusion.pre, t.pre, "Frame", "root", "conclusion pre")
            walker._entails_cond(t.post, conclusion.post, "Frame", "root", "conclusion post")
        return t

    return _single(session, run)


def check_model(lowered: Lowered, *, all_failures: bool = False) -> list[CheckReport]:
    return [check_outline(o, lowered, all_failures=all_failures) for o in lowered.outlines]
