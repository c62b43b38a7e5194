"""Recursive-descent parser for ``.dvl`` model files (grammar: docs/grammar.ebnf)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from dvl.dsl.lexer import LexError, Token, tokenize
from dvl.syntax import (
    ActAtom, Acquire, Alloc, And, Assign, BinOp, BoolConst, ChannelDecl, Cmp, Cond,
    Const, Deref, EdgeDecl, Emp, EnumDom, Eventually, Free, InvRef, Load, LocDecl,
    LogicDecl, NamedDom, Neg, NodeDecl, NodePar, Not, Or, Par, Placed, PointsTo,
    Prec, ProgRef, ProgramDecl, ProofOutlineDecl, PtrDom, RangeDom, Recv, Release,
    ResourceInvariantDecl, Send, Skip, SourceModel, Span, Star, StepDecl, Store,
    TripleDecl, TypeDecl, Var, VarDecl,
)

CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")
RULES = ("axiom", "seq", "consequence", "frame", "envcomp", "nodeenv", "nodecomp")


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: str  # "error" | "warning"
    span: Span
    message: str
    code: str

    def to_json(self) -> dict:
        return {"code": self.code, "severity": self.severity, "line": self.span.line,
                "column": self.span.column, "message": self.message}


class SyntaxFailure(Exception):
    def __init__(self, message: str, span: Span, code: str = "SYNTAX"):
        super().__init__(message)
        self.span = span
        self.code = code


class Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    # -- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text == text

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        t = self.tok
        self.i += 1
        return t

    def fail(self, message: str):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        code = "UNEXPECTED_EOF" if t.kind == "eof" else "SYNTAX"
        raise SyntaxFailure(f"{message}, found {found}", t.span, code)

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident":
            self.fail("expected identifier")
        self.i += 1
        return t.text

    def integer(self) -> int:
        neg = bool(self.accept("-"))
        t = self.tok
        if t.kind != "int":
            self.fail("expected integer")
        self.i += 1
        return -int(t.text) if neg else int(t.text)

    # -- top level -----------------------------------------------------------

    def model(self) -> SourceModel:
        parts = {k: [] for k in ("types", "channels", "logic", "shared", "invariants",
                                 "nodes", "programs", "outlines")}
        while self.tok.kind != "eof":
            if self.at("type"):
                parts["types"].append(self.type_decl())
            elif self.at("chan"):
                parts["channels"].append(self.chan_decl())
            elif self.at("logic"):
                parts["logic"].append(self.logic_decl())
            elif self.at("var"):
                parts["shared"].append(self.var_decl())
            elif self.at("invariant"):
                parts["invariants"].append(self.invariant_decl())
            elif self.at("node"):
                parts["nodes"].append(self.node_decl())
            elif self.at("program"):
                parts["programs"].append(self.program_decl())
            elif self.at("outline"):
                parts["outlines"].append(self.outline_decl())
            else:
                self.fail("expected a declaration")
        return SourceModel(**{k: tuple(v) for k, v in parts.items()})

    def domain(self):
        if self.accept("bool"):
            return NamedDom("bool")
        if self.accept("ptr"):
            return PtrDom()
        if self.accept("{"):
            values = [self.integer()]
            while self.accept(","):
                values.append(self.integer())
            self.expect("}")
            return EnumDom(tuple(values))
        if self.tok.kind == "int" or self.at("-"):
            lo = self.integer()
            self.expect("..")
            return RangeDom(lo, self.integer())
        return NamedDom(self.ident())

    def type_decl(self) -> TypeDecl:
        span = self.expect("type").span
        name = self.ident()
        self.expect("=")
        return TypeDecl(name, self.domain(), span)

    def chan_decl(self) -> ChannelDecl:
        span = self.expect("chan").span
        name = self.ident()
        self.expect("cap")
        cap = self.integer()
        self.expect("dom")
        return ChannelDecl(name, cap, self.domain(), span)

    def logic_decl(self) -> LogicDecl:
        span = self.expect("logic").span
        name = self.ident()
        self.expect(":")
        return LogicDecl(name, self.domain(), span)

    def var_decl(self) -> VarDecl:
        span = self.expect("var").span
        name = self.ident()
        self.expect(":")
        dom = self.domain()
        init = self.expr() if self.accept("=") else None
        return VarDecl(name, dom, init, span)

    def invariant_decl(self) -> ResourceInvariantDecl:
        span = self.expect("invariant").span
        name = self.ident()
        self.expect("(")
        cells = [self.ident()]
        while self.accept(","):
            cells.append(self.ident())
        self.expect(")")
        self.expect(":")
        return ResourceInvariantDecl(name, tuple(cells), self.formula(), span)

    def node_decl(self) -> NodeDecl:
        span = self.expect("node").span
        name = self.ident()
        self.expect("{")
        programs = []
        while not self.accept("}"):
            if not self.at("program"):
                self.fail("expected 'program' or '}'")
            programs.append(self.program_decl())
        return NodeDecl(name, tuple(programs), span)

    def program_decl(self) -> ProgramDecl:
        span = self.expect("program").span
        name = self.ident()
        self.expect("{")
        vars_, locs, start, init = [], [], [], None
        while not self.accept("}"):
            if self.at("var"):
                vars_.append(self.var_decl())
            elif self.accept("init"):
                init = self.formula()
            elif self.accept("start"):
                start.append(self.ident())
                while self.accept(","):
                    start.append(self.ident())
            elif self.at("loc"):
                locs.append(self.loc_decl())
            else:
                self.fail("expected 'var', 'init', 'start', 'loc' or '}'")
        return ProgramDecl(name, tuple(vars_), init, tuple(start), tuple(locs), span)

    def loc_decl(self) -> LocDecl:
        span = self.expect("loc").span
        name = self.ident()
        edges = []
        if self.accept(":"):
            edges.append(self.edge())
            while self.at("when"):
                edges.append(self.edge())
        return LocDecl(name, tuple(edges), span)

    def edge(self) -> EdgeDecl:
        span = self.expect("when").span
        guard = self.formula()
        await_ = self.formula() if self.accept("await") else None
        self.expect("do")
        action = self.action()
        label = self.ident() if self.accept("as") else None
        self.expect("goto")
        return EdgeDecl(guard, action, self.ident(), await_, label, span)

    def action(self):
        if self.accept("skip"):
            return Skip()
        if self.accept("free"):
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return Free(e)
        if self.accept("acquire"):
            return Acquire(self.ident())
        if self.accept("release"):
            return Release(self.ident())
        if self.accept("["):
            addr = self.expr()
            self.expect("]")
            self.expect(":=")
            return Store(addr, self.expr())
        name = self.ident()
        if self.accept("!"):
            return Send(name, self.expr())
        if self.accept("?"):
            return Recv(name, self.ident())
        self.expect(":=")
        if self.accept("alloc"):
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return Alloc(name, e)
        if self.accept("["):
            addr = self.expr()
            self.expect("]")
            return Load(name, addr)
        return Assign(name, self.expr())

    # -- expressions ------------------------------------------------------------

    def expr(self):
        left = self.unary_expr()
        while self.at("+") or self.at("-"):
            # `x |-> -` wildcard never reaches here; `- ` before a non-operand ends the expr
            if self.at("-") and not self._starts_operand(self.peek()):
                break
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.unary_expr())
        return left

    @staticmethod
    def _starts_operand(t: Token) -> bool:
        return t.kind in ("int", "ident") or (t.kind == "op" and t.text in ("(", "-"))

    def unary_expr(self):
        if self.accept("-"):
            inner = self.unary_expr()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return Const(int(t.text))
        if self.accept("true"):
            return Const(1)
        if self.accept("false"):
            return Const(0)
        if t.kind == "ident":
            self.i += 1
            return Var(t.text)
        self.fail("expected expression")

    # -- formulas ---------------------------------------------------------------

    def formula(self):
        left = self.and_formula()
        while self.accept("|"):
            left = Or(left, self.and_formula())
        return left

    def and_formula(self):
        items = [self.star_formula()]
        while self.accept("&"):
            items.append(self.star_formula())
        out = items[-1]
        for item in reversed(items[:-1]):
            out = And(item, out)
        return out

    def star_formula(self):
        items = [self.unary_formula()]
        while self.accept("*"):
            items.append(self.unary_formula())
        out = items[-1]
        for item in reversed(items[:-1]):
            out = Star(item, out)
        return out

    def unary_formula(self):
        if self.accept("~"):
            return Not(self.unary_formula())
        if self.accept("<>"):
            return Eventually(self.unary_formula())
        return self.primary_formula()

    def primary_formula(self):
        if self.accept("emp"):
            return Emp()
        if self.accept("top"):
            return BoolConst(True)
        if self.at("true") and not self._cmp_follows(1):
            self.i += 1
            return BoolConst(True)
        if self.at("false") and not self._cmp_follows(1):
            self.i += 1
            return BoolConst(False)
        if self.at("#") or (self.tok.kind == "ident" and self.peek().text in ("!", "?")
                            and self.peek().kind == "op"):
            return self.path()
        if self.at("["):
            self.i += 1
            addr = self.expr()
            self.expect("]")
            self.expect("|->")
            return PointsTo(Deref(addr), self.pointee())
        if self.tok.kind == "ident" and self.peek().kind == "op" and self.peek().text == "|->":
            name = self.ident()
            self.expect("|->")
            return PointsTo(name, self.pointee())
        if self.at("("):
            save = self.i
            try:
                return self.comparison()
            except SyntaxFailure:
                self.i = save
            self.expect("(")
            f = self.formula()
            self.expect(")")
            return f
        if self.tok.kind == "ident" and not self._cmp_follows(1) and not (
                self.peek().kind == "op" and self.peek().text in ("+", "-")):
            return InvRef(self.ident())
        return self.comparison()

    def _cmp_follows(self, k: int) -> bool:
        t = self.peek(k)
        return t.kind == "op" and t.text in CMP_OPS

    def comparison(self):
        left = self.expr()
        t = self.tok
        if not (t.kind == "op" and t.text in CMP_OPS):
            self.fail("expected comparison operator")
        self.i += 1
        return Cmp(t.text, left, self.expr())

    def pointee(self):
        if self.at("-") and not self._starts_operand(self.peek()):
            self.i += 1
            return None
        return self.expr()

    def act_atom(self) -> ActAtom:
        if self.accept("#"):
            atom = ActAtom("label", self.ident())
        else:
            name = self.ident()
            if self.accept("!"):
                atom = ActAtom("send", name, self.expr())
            else:
                self.expect("?")
                atom = ActAtom("recv", name, self.ident())
        if self.accept("@"):
            atom = ActAtom(atom.kind, atom.name, atom.arg, self.ident())
        return atom

    def path(self):
        items = [self.act_atom()]
        while self.accept("-<"):
            items.append(self.act_atom())
        return items[0] if len(items) == 1 else Prec(tuple(items))

    # -- outlines -----------------------------------------------------------------

    def cond(self) -> Cond:
        self.expect("{")
        first = self.formula()
        if self.accept(","):
            second = self.formula()
            self.expect("}")
            return Cond(first, second)
        self.expect("}")
        return Cond(BoolConst(True), first)

    def code(self):
        parts = [self.par_code()]
        while self.accept("||N"):
            parts.append(self.par_code())
        return parts[0] if len(parts) == 1 else NodePar(tuple(parts))

    def par_code(self):
        parts = [self.code_primary()]
        while self.accept("||"):
            parts.append(self.code_primary())
        return parts[0] if len(parts) == 1 else Par(tuple(parts))

    def code_primary(self):
        if self.accept("("):
            inner = self.code()
            self.expect(")")
            if self.accept("@"):
                return Placed(inner, self.ident())
            return inner
        name = self.ident()
        node = self.ident() if self.accept("@") else None
        return ProgRef(name, node)

    def outline_decl(self) -> ProofOutlineDecl:
        span = self.expect("outline").span
        name = self.ident()
        self.expect("{")
        self.expect("target")
        pre = self.cond()
        code = self.code()
        post = self.cond()
        payloads = []
        while self.accept("payload"):
            ch = self.ident()
            self.expect(":")
            payloads.append((ch, self.formula()))
        self.expect("proof")
        proof = self.step()
        self.expect("}")
        return ProofOutlineDecl(name, TripleDecl(pre, code, post), proof, tuple(payloads), span)

    def step(self) -> StepDecl:
        t = self.tok
        if not (t.kind == "kw" and t.text in RULES):
            self.fail("expected a proof rule")
        self.i += 1
        rule = t.text
        if rule in ("axiom", "seq"):
            program = self.ident()
            self.expect("{")
            pre = post = None
            at = []
            if rule == "axiom":
                self.expect("pre")
                pre = self.cond()
                self.expect("post")
                post = self.cond()
            else:
                while self.accept("at"):
                    loc = self.ident()
                    at.append((loc, self.cond()))
            self.expect("}")
            return StepDecl(rule, program=program, pre=pre, post=post, at=tuple(at), span=t.span)
        node = self.ident() if rule == "nodeenv" else None
        frame = self.formula() if rule == "frame" else None
        self.expect("{")
        pre = post = None
        if rule == "consequence":
            self.expect("pre")
            pre = self.cond()
            self.expect("post")
            post = self.cond()
        elif self.accept("claim"):
            pre = self.cond()
            post = self.cond()
        premises = []
        while not self.accept("}"):
            premises.append(self.step())
        return StepDecl(rule, node=node, pre=pre, post=post, frame=frame,
                        premises=tuple(premises), span=t.span)


def parse_syntax(text: str) -> SourceModel:
    """Parse without well-formedness checking; raises SyntaxFailure/LexError."""
    return Parser(tokenize(text)).model()


def parse_formula(text: str):
    p = Parser(tokenize(text))
    f = p.formula()
    if p.tok.kind != "eof":
        p.fail("trailing input")
    return f


def parse_cond(text: str) -> Cond:
    p = Parser(tokenize(text))
    c = p.cond()
    if p.tok.kind != "eof":
        p.fail("trailing input")
    return c


def parse_expr(text: str):
    p = Parser(tokenize(text))
    e = p.expr()
    if p.tok.kind != "eof":
        p.fail("trailing input")
    return e


def parse_action(text: str):
    p = Parser(tokenize(text))
    a = p.action()
    if p.tok.kind != "eof":
        p.fail("trailing input")
    return a


def parse(text: str):
    """Parse and check well-formedness.

    Returns a :class:`SourceModel`, or a non-empty list of
    :class:`ParseDiagnostic` when any error was found.
    """
    from dvl.dsl.wellformed import check_wellformed

    try:
        model = parse_syntax(text)
    except LexError as exc:
        return [ParseDiagnostic("error", exc.span, str(exc), "BAD_TOKEN")]
    except SyntaxFailure as exc:
        return [ParseDiagnostic("error", exc.span, str(exc), exc.code)]
    except RecursionError:
        return [ParseDiagnostic("error", Span(1, 1, 0), "input nested too deeply", "SYNTAX")]
    diags = check_wellformed(model)
    if any(d.severity == "error" for d in diags):
        return diags
    return model
