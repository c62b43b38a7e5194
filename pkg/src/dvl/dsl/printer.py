"""Canonical pretty printer; ``parse(pretty_print(m)) == m`` for well-formed ``m``."""
from __future__ import annotations

from dvl.syntax import (
    ActAtom, Acquire, Alloc, And, Assign, BinOp, BoolConst, Cmp, Cond, Const, Deref,
    Emp, EnumDom, Eventually, Free, InvRef, Load, NamedDom, Neg, NodePar, Not, Or,
    Par, Placed, PointsTo, Prec, ProgRef, PtrDom, RangeDom, Recv, Release, Send, Skip,
    SourceModel, Star, StepDecl, Store, Var, ActionCode,
)

_PREC = {Or: 1, And: 2, Star: 3}


def expr_str(e) -> str:
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = expr_str(e.operand)
        if isinstance(e.operand, BinOp) or (isinstance(e.operand, Const) and e.operand.value < 0):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        right = expr_str(e.right)
        if isinstance(e.right, BinOp):
            right = f"({right})"
        return f"{expr_str(e.left)} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


def atom_str(a: ActAtom) -> str:
    if a.kind == "label":
        s = f"#{a.name}"
    elif a.kind == "send":
        arg = expr_str(a.arg)
        if isinstance(a.arg, BinOp):
            arg = f"({arg})"
        s = f"{a.name}!{arg}"
    else:
        s = f"{a.name}?{a.arg}"
    return f"{s}@{a.node}" if a.node else s


def formula_str(f) -> str:
    if isinstance(f, BoolConst):
        return "top" if f.value else "false"
    if isinstance(f, Emp):
        return "emp"
    if isinstance(f, Cmp):
        return f"{expr_str(f.left)} {f.op} {expr_str(f.right)}"
    if isinstance(f, InvRef):
        return f.name
    if isinstance(f, PointsTo):
        loc = f.loc if isinstance(f.loc, str) else f"[{expr_str(f.loc.addr)}]"
        val = "-" if f.value is None else expr_str(f.value)
        return f"{loc} |-> {val}"
    if isinstance(f, ActAtom):
        return atom_str(f)
    if isinstance(f, Prec):
        return " -< ".join(atom_str(a) for a in f.items)
    if isinstance(f, (Not, Eventually)):
        op = "~" if isinstance(f, Not) else "<>"
        inner = formula_str(f.operand)
        if type(f.operand) in _PREC or isinstance(f.operand, (Cmp, Prec, PointsTo)):
            inner = f"({inner})"
        return f"{op}{inner}"
    if type(f) in _PREC:
        prec = _PREC[type(f)]
        sym = {Or: "|", And: "&", Star: "*"}[type(f)]
        left, right = formula_str(f.left), formula_str(f.right)
        lp = _PREC.get(type(f.left), 9)
        rp = _PREC.get(type(f.right), 9)
        # Or parses left-assoc, And/Star right-assoc
        if lp < prec or (lp == prec and not isinstance(f, Or)):
            left = f"({left})"
        if rp < prec or (rp == prec and isinstance(f, Or)):
            right = f"({right})"
        return f"{left} {sym} {right}"
    raise TypeError(f"not a formula: {f!r}")


def cond_str(c: Cond) -> str:
    return f"{{ {formula_str(c.foreign)} , {formula_str(c.native)} }}"


def action_str(a) -> str:
    if isinstance(a, Skip):
        return "skip"
    if isinstance(a, Assign):
        return f"{a.var} := {expr_str(a.expr)}"
    if isinstance(a, Send):
        return f"{a.channel}!{expr_str(a.expr)}"
    if isinstance(a, Recv):
        return f"{a.channel}?{a.var}"
    if isinstance(a, Alloc):
        return f"{a.var} := alloc({expr_str(a.expr)})"
    if isinstance(a, Load):
        return f"{a.var} := [{expr_str(a.addr)}]"
    if isinstance(a, Store):
        return f"[{expr_str(a.addr)}] := {expr_str(a.expr)}"
    if isinstance(a, Free):
        return f"free({expr_str(a.addr)})"
    if isinstance(a, Acquire):
        return f"acquire {a.resource}"
    if isinstance(a, Release):
        return f"release {a.resource}"
    raise TypeError(f"not an action: {a!r}")


def dom_str(d) -> str:
    if isinstance(d, RangeDom):
        return f"{d.lo}..{d.hi}"
    if isinstance(d, EnumDom):
        return "{" + ", ".join(map(str, d.values)) + "}"
    if isinstance(d, PtrDom):
        return "ptr"
    if isinstance(d, NamedDom):
        return d.name
    raise TypeError(d)


def code_str(c) -> str:
    if isinstance(c, ProgRef):
        return f"{c.name}@{c.node}" if c.node else c.name
    if isinstance(c, ActionCode):
        s = f"<{action_str(c.action)}>"
        return f"{s}@{c.node}" if c.node else s
    if isinstance(c, Placed):
        return f"({code_str(c.code)})@{c.node}"
    if isinstance(c, Par):
        return " || ".join(f"({code_str(p)})" if isinstance(p, (Par, NodePar)) else code_str(p)
                           for p in c.parts)
    if isinstance(c, NodePar):
        return " ||N ".join(f"({code_str(p)})" if isinstance(p, NodePar) else code_str(p)
                            for p in c.parts)
    raise TypeError(c)


def _var_line(v, indent: str) -> str:
    s = f"{indent}var {v.name} : {dom_str(v.dom)}"
    if v.init is not None:
        s += f" = {expr_str(v.init)}"
    return s


def _program_lines(p, indent: str) -> list[str]:
    inner = indent + "  "
    lines = [f"{indent}program {p.name} {{"]
    lines += [_var_line(v, inner) for v in p.vars]
    if p.init is not None:
        lines.append(f"{inner}init {formula_str(p.init)}")
    if p.start:
        lines.append(f"{inner}start {', '.join(p.start)}")
    for loc in p.locs:
        if not loc.edges:
            lines.append(f"{inner}loc {loc.name}")
            continue
        lines.append(f"{inner}loc {loc.name}:")
        for e in loc.edges:
            s = f"{inner}  when {formula_str(e.guard)}"
            if e.await_ is not None:
                s += f" await {formula_str(e.await_)}"
            s += f" do {action_str(e.action)}"
            if e.label:
                s += f" as {e.label}"
            lines.append(f"{s} goto {e.target}")
    lines.append(f"{indent}}}")
    return lines


def _step_lines(s: StepDecl, indent: str) -> list[str]:
    inner = indent + "  "
    if s.rule in ("axiom", "seq"):
        lines = [f"{indent}{s.rule} {s.program} {{"]
        if s.rule == "axiom":
            lines.append(f"{inner}pre {cond_str(s.pre)}")
            lines.append(f"{inner}post {cond_str(s.post)}")
        for loc, c in s.at:
            lines.append(f"{inner}at {loc} {cond_str(c)}")
        lines.append(f"{indent}}}")
        return lines
    head = s.rule
    if s.rule == "nodeenv":
        head += f" {s.node}"
    if s.rule == "frame":
        head += f" {formula_str(s.frame)}"
    lines = [f"{indent}{head} {{"]
    if s.rule == "consequence":
        lines.append(f"{inner}pre {cond_str(s.pre)}")
        lines.append(f"{inner}post {cond_str(s.post)}")
    elif s.pre is not None:
        lines.append(f"{inner}claim {cond_str(s.pre)} {cond_str(s.post)}")
    for p in s.premises:
        lines += _step_lines(p, inner)
    lines.append(f"{indent}}}")
    return lines


def pretty_print(model: SourceModel) -> str:
    lines: list[str] = []
    for t in model.types:
        lines.append(f"type {t.name} = {dom_str(t.dom)}")
    for c in model.channels:
        lines.append(f"chan {c.name} cap {c.capacity} dom {dom_str(c.domain)}")
    for l in model.logic:
        lines.append(f"logic {l.name} : {dom_str(l.dom)}")
    for v in model.shared:
        lines.append(_var_line(v, ""))
    for r in model.invariants:
        lines.append(f"invariant {r.name} ({', '.join(r.footprint)}) : {formula_str(r.body)}")
    for n in model.nodes:
        lines.append(f"node {n.name} {{")
        for p in n.programs:
            lines += _program_lines(p, "  ")
        lines.append("}")
    for p in model.programs:
        lines += _program_lines(p, "")
    for o in model.outlines:
        lines.append(f"outline {o.name} {{")
        t = o.target
        lines.append(f"  target {cond_str(t.pre)}")
        lines.append(f"    {code_str(t.code)}")
        lines.append(f"    {cond_str(t.post)}")
        for ch, f in o.payloads:
            lines.append(f"  payload {ch} : {formula_str(f)}")
        lines.append("  proof")
        lines += _step_lines(o.proof, "    ")
        lines.append("}")
    return "\n".join(lines) + ("\n" if lines else "")
