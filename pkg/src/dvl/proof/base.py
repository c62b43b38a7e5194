"""Shared state of a proof-checking session: failures, statistics, contexts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from dvl.assertions import Context, EntailResult, SymHeap, entails, symbolic
from dvl.dsl.printer import cond_str
from dvl.dsl.wellformed import expr_vars, formula_vars
from dvl.syntax import (
    Acquire, Alloc, Assign, Cond, Free, Load, Recv, Release, Send, Skip, Store, TOP, conj,
    conjuncts,
)


class Abort(Exception):
    """Raised to stop checking at the first failing obligation."""


@dataclass(frozen=True)
class Failure:
    verdict: str  # refuted | unknown
    rule: str
    path: str
    message: str
    premise: Optional[str] = None
    witness: Optional[dict] = None

    def to_json(self) -> dict:
        return {"rule": self.rule, "path": self.path, "message": self.message,
                "premise": self.premise, "witness": self.witness}


@dataclass
class Stats:
    obligations: int = 0
    entailments: int = 0

    def to_json(self) -> dict:
        return {"obligations": self.obligations, "entailments": self.entailments}


def footprint(f, resources=None) -> set[str]:
    """Named cells claimed by the points-to atoms of an assertion."""
    sh = symbolic(f, resources)
    return set() if sh is None else {a.loc for a in sh.atoms if isinstance(a.loc, str)}


def spatial_reads(f) -> set[str]:
    return set(formula_vars(f))


def triple_str(pre: Cond, code: str, post: Cond) -> str:
    return f"{cond_str(pre)} {code} {cond_str(post)}"


def modified(action) -> set[str]:
    if isinstance(action, (Assign, Alloc, Load, Recv)):
        return {action.var}
    return set()


def action_cells_read(action) -> set[str]:
    if isinstance(action, (Assign, Send, Alloc)):
        return expr_vars(action.expr)
    if isinstance(action, Load):
        return expr_vars(action.addr)
    if isinstance(action, Store):
        return expr_vars(action.addr) | expr_vars(action.expr)
    if isinstance(action, Free):
        return expr_vars(action.addr)
    return set()


@dataclass
class Session:
    """Mutable bookkeeping for one :func:`check_outline` run."""

    domains: dict
    logic: frozenset
    resources: dict = field(default_factory=dict)
    channels: dict = field(default_factory=dict)
    payloads: dict = field(default_factory=dict)
    immutable: frozenset = frozenset()
    lock_protected: frozenset = frozenset()
    stats: Stats = field(default_factory=Stats)
    failures: list = field(default_factory=list)
    stop_at_first: bool = True

    @property
    def ctx(self) -> Context:
        return Context(self.domains, self.logic, self.resources)

    def fail(self, verdict, rule, path, message, premise=None, witness=None):
        f = Failure(verdict, rule, path, message, premise, witness)
        self.failures.append(f)
        if self.stop_at_first and verdict == "refuted":
            raise Abort()
        return f

    def obligation(self):
        self.stats.obligations += 1

    def entails(self, p, q, *, rule: str, path: str, what: str, premise=None) -> bool:
        """Entailment obligation with the ownership side condition: every cell
        claimed by ``q`` must be claimed by ``p``."""
        self.stats.obligations += 1
        self.stats.entailments += 1
        p_sp = p.spatial if isinstance(p, Cond) else Cond(TOP, p).spatial
        q_sp = q.spatial if isinstance(q, Cond) else Cond(TOP, q).spatial
        missing = footprint(q_sp, self.resources) - footprint(p_sp, self.resources)
        if missing:
            self.fail("refuted", rule, path, f"{what}: ownership of {sorted(missing)} not implied",
                      premise)
            return False
        r: EntailResult = entails(p, q, self.ctx)
        if r.verdict == "valid":
            return True
        if r.verdict == "invalid":
            self.fail("refuted", rule, path, f"{what}: {r.reason}", premise, r.witness)
        else:
            self.fail("unknown", rule, path, f"{what}: {r.reason}", premise)
        return False


def sym_or_none(f, session: Session) -> Optional[SymHeap]:
    sh = symbolic(f, session.resources)
    if sh is None:
        return None
    return SymHeap(sh.atoms, sh.pure, exact=False)


def star_conds(conds, foreign=TOP) -> Cond:
    """``{foreign, conj(gamma_i) & (*_i P_i)}`` for native conditions ``Upsilon_i``."""
    from dvl.assertions import big_star

    envs, spatials = [], []
    for c in conds:
        env, sp = c.split()
        envs += conjuncts(env)
        if sp != TOP:
            spatials.append(sp)
    spatial = big_star(spatials) if spatials else TOP
    return Cond.of(foreign, conj(envs), spatial)


__all__ = [
    "Abort", "Failure", "Stats", "Session", "footprint", "spatial_reads", "triple_str",
    "modified", "action_cells_read", "sym_or_none", "star_conds", "Skip", "Acquire", "Release",
]
