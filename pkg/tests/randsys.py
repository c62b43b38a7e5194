"""Random small systems with automatically generated proof outlines.

``random_case(rng)`` builds a model of at most three straight-line programs
(with the occasional two-way branch) over channels of capacity at most two
and value domains of at most three values, then annotates every location
from a forward pass over the program text. With some probability the
annotation or the target is mutated, so the checker sees both provable and
unprovable outlines. The soundness test runs the checker and the explorer on
every case and requires that no verified outline is refuted by exploration.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field


@dataclass
class Prog:
    name: str
    vars: dict  # name -> (domain text, values, init or None)
    steps: list = field(default_factory=list)  # list of edge-alternatives per location


@dataclass
class Case:
    seed: int
    source: str
    mutated: bool


def random_case(seed: int) -> Case:
    rng = random.Random(seed)
    n_prog = rng.randint(1, 3)
    chans = {}
    for k in range(rng.randint(1, 2)):
        cap = rng.randint(1, 2)
        dom = rng.choice([("bool", [0, 1]), ("0..2", [0, 1, 2])])
        chans[f"c{k}"] = (cap, dom)
    progs = []
    for i in range(n_prog):
        p = Prog(f"P{i}", {})
        for j in range(rng.randint(1, 2)):
            dom = rng.choice([("bool", [0, 1]), ("0..2", [0, 1, 2])])
            init = rng.choice(dom[1]) if rng.random() < 0.5 else None
            p.vars[f"x{i}{j}"] = (dom[0], dom[1], init)
        progs.append(p)

    # messages in one global order keep send/receive pairs deadlock free
    for _ in range(rng.randint(0, 3) if n_prog > 1 else 0):
        ch = rng.choice(list(chans))
        src, dst = rng.sample(progs, 2)
        cdom = chans[ch][1][1]
        fit = [x for x, (_, vals, _) in dst.vars.items() if set(cdom) <= set(vals)]
        if not fit:
            continue
        own = [x for x, (_, vals, _) in src.vars.items() if set(vals) <= set(cdom)]
        e = rng.choice(own) if own and rng.random() < 0.5 else str(rng.choice(cdom))
        src.steps.append([("top", f"{ch}!{e}", ("send", ch, e))])
        dst.steps.append([("top", f"{ch}?{rng.choice(fit)}", ("recv", ch, None))])
    for p in progs:
        own = list(p.vars)
        for _ in range(rng.randint(0 if p.steps else 1, 2)):
            kind = rng.choices(["assign", "skip", "branch", "stray"], [4, 2, 2, 1])[0]
            pos = rng.randint(0, len(p.steps))
            if kind == "assign":
                x = rng.choice(own)
                vals = p.vars[x][1]
                rhs = rng.choice([str(rng.choice(vals)), rng.choice(own), f"{x} + 1"])
                step = [("top", f"{x} := {rhs}", ("assign", x, rhs))]
            elif kind == "skip":
                step = [("top", f"skip as L{p.name}", ("skip", None, None))]
            elif kind == "branch":
                x = rng.choice(own)
                k = rng.choice(p.vars[x][1])
                y = rng.choice(own)
                a = str(rng.choice(p.vars[y][1]))
                b = str(rng.choice(p.vars[y][1]))
                step = [(f"{x} == {k}", f"{y} := {a}", ("assign", y, a)),
                        (f"{x} != {k}", f"{y} := {b}", ("assign", y, b))]
            else:
                # an unmatched communication: blocks, or overflows nothing
                ch = rng.choice(list(chans))
                cdom = chans[ch][1][1]
                fit = [x for x, (_, vals, _) in p.vars.items() if set(cdom) <= set(vals)]
                if fit and rng.random() < 0.5:
                    step = [("top", f"{ch}?{rng.choice(fit)}", ("recv", ch, None))]
                else:
                    step = [("top", f"{ch}!{rng.choice(cdom)}", ("send", ch, str(rng.choice(cdom))))]
                    step = [("top", step[0][1], ("send", ch, step[0][1].split("!")[1]))]
            p.steps.insert(pos, step)

    sends = {}
    for p in progs:
        for alts in p.steps:
            _, _, (kind, ch, e) = alts[0]
            if kind == "send":
                sends.setdefault(ch, []).append((p.name, e))
    for p in progs:
        for alts in p.steps:
            g, text, (kind, ch, _) = alts[0]
            if kind == "recv":
                x = text.split("?")[1]
                alts[0] = (g, text, ("recv", ch, x))

    lines = []
    for ch, (cap, dom) in chans.items():
        lines.append(f"chan {ch} cap {cap} dom {dom[0]}")
    lines.append("")
    for p in progs:
        lines.append(f"program {p.name} {{")
        for x, (d, _, init) in p.vars.items():
            lines.append(f"  var {x} : {d}" + (f" = {init}" if init is not None else ""))
        lines.append("  start l0")
        for k, alts in enumerate(p.steps):
            body = "\n        ".join(f"when {g} do {t} goto l{k + 1}" for g, t, _ in alts)
            lines.append(f"  loc l{k}: {body}")
        lines.append(f"  loc l{len(p.steps)}")
        lines.append("}")
        lines.append("")

    mutated = False
    annotations = {}
    finals = []
    for p in progs:
        rows, final, mut = _annotate(p, sends, rng)
        mutated |= mut
        annotations[p.name] = rows
        finals.append(final)

    pre = " * ".join(f"{x} |-> -" for p in progs for x in p.vars)
    # the consequence step sees the initialized cells with their values
    start = " * ".join(f"{x} |-> {'-' if init is None else init}"
                       for p in progs for x, (_, _, init) in p.vars.items())
    post = " & ".join([a for env, _, _ in finals for a in env]
                      + [" * ".join(cells for _, cells, _ in finals)])
    extra = [f for _, _, fs in finals for f in fs]
    if extra:
        post += " & " + " & ".join(extra)
    if rng.random() < 0.15:
        p = rng.choice(progs)
        x = rng.choice(list(p.vars))
        post += f" & {x} == {rng.choice(p.vars[x][1])}"
        mutated = True
    code = " || ".join(p.name for p in progs)
    lines.append("outline rnd {")
    lines.append(f"  target {{ {pre} }} {code} {{ {post} }}")
    lines.append("  proof consequence {")
    lines.append(f"    pre {{ {start} }}")
    lines.append(f"    post {{ {post} }}")
    lines.append("    envcomp {")
    for p in progs:
        lines.append(f"      seq {p.name} {{")
        for loc, (foreign, native) in enumerate(annotations[p.name]):
            lines.append(f"        at l{loc} {{ {foreign}, {native} }}")
        lines.append("      }")
    lines.append("    }")
    lines.append("  }")
    lines.append("}")
    return Case(seed, "\n".join(lines) + "\n", mutated)


def _annotate(p: Prog, sends: dict, rng):
    """Per-location (foreign, native) texts and the final native."""
    known = {x: init for x, (_, _, init) in p.vars.items()}
    facts: dict = {}  # x -> sender cell it was received from
    env: list[str] = []

    def forget(x):
        for k in [k for k, e in facts.items() if x in (k, e)]:
            del facts[k]
    foreign_atoms = []
    for alts in p.steps:
        _, _, (kind, ch, x) = alts[0]
        if kind == "recv":
            partners = [e for prog, e in sends.get(ch, []) if prog != p.name]
            e = partners[0] if partners else "0"
            if f"{ch}!{e}" not in foreign_atoms:
                foreign_atoms.append(f"{ch}!{e}")
    foreign = " & ".join(foreign_atoms) or "top"
    mutated = False
    if foreign_atoms and rng.random() < 0.1:
        foreign, mutated = "top", True

    def native():
        cells = " * ".join(f"{x} |-> {known[x] if known[x] is not None else '-'}"
                           for x in p.vars)
        parts = env + [cells] + [f"{x} == {e}" for x, e in sorted(facts.items())]
        return " & ".join(parts)

    rows = [(foreign, native())]
    for alts in p.steps:
        _, text, (kind, ch, x) = alts[0]
        if len(alts) > 1:
            vals = {a[2][2] for a in alts}
            y = alts[0][2][1]
            known[y] = int(vals.pop()) if len(vals) == 1 else None
            forget(y)
        elif kind == "send":
            env.append(f"{ch}!{x}")
        elif kind == "recv":
            env.append(f"{ch}?{x}")
            partners = [e for prog, e in sends.get(ch, []) if prog != p.name]
            values = {e for e in partners}
            known[x] = int(partners[0]) if len(values) == 1 and partners[0].isdigit() else None
            forget(x)
            if len(values) == 1 and not partners[0].isdigit():
                facts[x] = partners[0]
        elif kind == "assign":
            target, rhs = ch, x  # assign steps carry (target, right-hand side)
            forget(target)
            if rhs.isdigit():
                known[target] = int(rhs)
            elif rhs.endswith("+ 1"):
                known[target] = None if known[target] is None else known[target] + 1
            else:
                known[target] = known[rhs]
        elif kind == "skip":
            env.append(f"#L{p.name}")
        rows.append((foreign, native()))
    if rng.random() < 0.1:
        # claim a wrong value somewhere
        k = rng.randrange(len(rows))
        x = rng.choice(list(p.vars))
        rows[k] = (rows[k][0], rows[k][1] + f" & {x} == {rng.choice(p.vars[x][1])}")
        mutated = True
    cells = " * ".join(f"{x} |-> {known[x] if known[x] is not None else '-'}" for x in p.vars)
    final = (list(env), cells, [f"{x} == {e}" for x, e in sorted(facts.items())])
    return rows, final, mutated


@dataclass
class SweepResult:
    cases: int = 0
    verified: int = 0
    refuted: int = 0
    valid: int = 0
    invalid: int = 0
    unsound: list = field(default_factory=list)  # seeds checked verified but explored invalid


def sweep(seeds) -> SweepResult:
    """Run the checker and the explorer on every random case."""
    from dvl.checker import check_outline
    from dvl.dsl.lower import load
    from dvl.explorer import explore, task_for_outline

    out = SweepResult()
    for seed in seeds:
        case = random_case(seed)
        low = load(case.source)
        outline = low.outlines[0]
        verdict = check_outline(outline, low).verdict
        kind = explore(task_for_outline(outline, low)).kind
        out.cases += 1
        out.verified += verdict == "verified"
        out.refuted += verdict == "refuted"
        out.valid += kind == "valid"
        out.invalid += kind == "invalid"
        if verdict == "verified" and kind == "invalid":
            out.unsound.append(seed)
    return out
