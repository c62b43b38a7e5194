"""Abstract syntax shared by the parser, the assertion engine and the checker.

All nodes are frozen dataclasses so that structural equality and hashing come
for free. Source spans are carried outside the compared fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


# ---------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - *
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Neg, BinOp]


# ---------------------------------------------------------------------------
# formulas: guards, pure facts, spatial assertions and environment factors
# share one tree; well-formedness decides which constructors may appear where.


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str  # == != < <= > >=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Emp:
    pass


@dataclass(frozen=True)
class Deref:
    """Address given by the value of an expression: ``[e]``."""

    addr: Expr


@dataclass(frozen=True)
class PointsTo:
    """``x |-> e``; ``value is None`` encodes ``x |-> -``."""

    loc: Union[str, Deref]
    value: Optional[Expr]


@dataclass(frozen=True)
class Star:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class InvRef:
    """Reference to a declared resource invariant by name."""

    name: str


@dataclass(frozen=True)
class ActAtom:
    """Occurred-action atom: ``c!e``, ``c?x`` or ``#label``, optionally ``@N``."""

    kind: str  # "send" | "recv" | "label"
    name: str  # channel name, or label name
    arg: Optional[Union[Expr, str]] = None  # sent expression / receiving variable
    node: Optional[str] = None

    def unplaced(self) -> "ActAtom":
        return ActAtom(self.kind, self.name, self.arg, None)


@dataclass(frozen=True)
class Prec:
    """Action path ``a0 -< a1 -< ... -< an`` (n >= 1)."""

    items: tuple[ActAtom, ...]


@dataclass(frozen=True)
class Eventually:
    operand: "Formula"


Formula = Union[BoolConst, Cmp, Not, And, Or, Emp, PointsTo, Star, InvRef,
                ActAtom, Prec, Eventually]

TOP = BoolConst(True)
BOTTOM = BoolConst(False)


def conj(items) -> Formula:
    """Right-nested conjunction of ``items``; ``top`` when empty."""
    items = [i for i in items if i != TOP]
    if not items:
        return TOP
    out = items[-1]
    for item in reversed(items[:-1]):
        out = And(item, out)
    return out


def conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        return conjuncts(f.left) + conjuncts(f.right)
    if f == TOP:
        return []
    return [f]


def is_env(f: Formula) -> bool:
    """True for environment-factor syntax (history predicates)."""
    if isinstance(f, (ActAtom, Prec, Eventually)):
        return True
    if isinstance(f, And):
        return is_env(f.left) and is_env(f.right)
    return False


@dataclass(frozen=True)
class Cond:
    """A pre/post pair ``{ foreign , native }``.

    ``native`` mixes native environment items and the spatial assertion as
    a ``&``-conjunction; :meth:`split` separates them.
    """

    foreign: Formula = TOP
    native: Formula = TOP

    def split(self) -> tuple[Formula, Formula]:
        env, spatial = [], []
        for item in conjuncts(self.native):
            (env if is_env(item) else spatial).append(item)
        return conj(env), conj(spatial)

    @property
    def native_env(self) -> Formula:
        return self.split()[0]

    @property
    def spatial(self) -> Formula:
        return self.split()[1]

    @staticmethod
    def of(foreign: Formula, native_env: Formula, spatial: Formula) -> "Cond":
        return Cond(foreign, conj(conjuncts(native_env) + conjuncts(spatial)))


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Send:
    channel: str
    expr: Expr


@dataclass(frozen=True)
class Recv:
    channel: str
    var: str


@dataclass(frozen=True)
class Alloc:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Load:
    var: str
    addr: Expr


@dataclass(frozen=True)
class Store:
    addr: Expr
    expr: Expr


@dataclass(frozen=True)
class Free:
    addr: Expr


@dataclass(frozen=True)
class Acquire:
    resource: str


@dataclass(frozen=True)
class Release:
    resource: str


Action = Union[Skip, Assign, Send, Recv, Alloc, Load, Store, Free, Acquire, Release]
COMMUNICATIONS = (Send, Recv)


# ---------------------------------------------------------------------------
# declarations


@dataclass(frozen=True)
class Span:
    line: int
    column: int
    length: int = 1


NOSPAN = Span(0, 0, 0)


@dataclass(frozen=True)
class RangeDom:
    lo: int
    hi: int


@dataclass(frozen=True)
class EnumDom:
    values: tuple[int, ...]


@dataclass(frozen=True)
class NamedDom:
    name: str


@dataclass(frozen=True)
class PtrDom:
    pass


DomainExpr = Union[RangeDom, EnumDom, NamedDom, PtrDom]


@dataclass(frozen=True)
class TypeDecl:
    name: str
    dom: DomainExpr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    capacity: int
    domain: DomainExpr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class VarDecl:
    name: str
    dom: DomainExpr
    init: Optional[Expr] = None
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class LogicDecl:
    name: str
    dom: DomainExpr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class EdgeDecl:
    guard: Formula
    action: Action
    target: str
    await_: Optional[Formula] = None
    label: Optional[str] = None
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class LocDecl:
    name: str
    edges: tuple[EdgeDecl, ...] = ()
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class ProgramDecl:
    name: str
    vars: tuple[VarDecl, ...] = ()
    init: Optional[Formula] = None
    start: tuple[str, ...] = ()
    locs: tuple[LocDecl, ...] = ()
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class NodeDecl:
    name: str
    programs: tuple[ProgramDecl, ...] = ()
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class ResourceInvariantDecl:
    name: str
    footprint: tuple[str, ...]
    body: Formula
    span: Span = field(default=NOSPAN, compare=False)


# code trees of triples


@dataclass(frozen=True)
class ProgRef:
    name: str
    node: Optional[str] = None


@dataclass(frozen=True)
class ActionCode:
    """A bare action used as triple code (axiom-level triples)."""

    action: Action
    node: Optional[str] = None


@dataclass(frozen=True)
class Par:
    parts: tuple["Code", ...]


@dataclass(frozen=True)
class NodePar:
    parts: tuple["Code", ...]


@dataclass(frozen=True)
class Placed:
    """``(C)@N``: a program-level composition placed on node ``N``."""

    code: "Code"
    node: str


Code = Union[ProgRef, ActionCode, Par, NodePar, Placed]


@dataclass(frozen=True)
class TripleDecl:
    pre: Cond
    code: Code
    post: Cond


@dataclass(frozen=True)
class StepDecl:
    """One node of a proof tree as written in the source."""

    rule: str  # axiom seq consequence frame envcomp nodeenv nodecomp
    program: Optional[str] = None  # axiom / seq
    node: Optional[str] = None  # nodeenv
    pre: Optional[Cond] = None  # axiom / consequence / claim
    post: Optional[Cond] = None
    at: tuple[tuple[str, Cond], ...] = ()  # seq annotations
    frame: Optional[Formula] = None
    premises: tuple["StepDecl", ...] = ()
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class ProofOutlineDecl:
    name: str
    target: TripleDecl
    proof: StepDecl
    payloads: tuple[tuple[str, Formula], ...] = ()
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class SourceModel:
    types: tuple[TypeDecl, ...] = ()
    channels: tuple[ChannelDecl, ...] = ()
    logic: tuple[LogicDecl, ...] = ()
    shared: tuple[VarDecl, ...] = ()
    invariants: tuple[ResourceInvariantDecl, ...] = ()
    nodes: tuple[NodeDecl, ...] = ()
    programs: tuple[ProgramDecl, ...] = ()  # top level, owned by the default node
    outlines: tuple[ProofOutlineDecl, ...] = ()
