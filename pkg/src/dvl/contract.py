"""The MyBank / Malicious reentrancy case.

``MyBank.Withdraw`` receives an amount, checks the balance, pays out with an
external call (a ``pay`` send followed by a ``ret`` receive, so the caller's
fallback runs before Withdraw resumes) and decrements the balance. The
attacker's fallback calls Withdraw once more on a shadow instance of the bank
(reentrancy depth one). In the vulnerable variant the decrement follows the
external call; the fixed variant decrements first. The two variants differ
only in where that one action sits.

Models are generated as DSL text for concrete ``n`` (initial balance) and
``a`` (amount), together with the natural proof outline of each variant: the
vulnerable outline verifies bank and shadow separately, each owning the
balance, and is refuted when they are composed; the fixed outline hands the
balance over with the payment and verifies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from dvl.checker import CheckReport, check_outline
from dvl.dsl.lower import Lowered, load
from dvl.explorer import Verdict, explore, replay, task_for_outline


@dataclass(frozen=True)
class ContractModel:
    variant: str  # vulnerable | fixed
    n: int
    a: int
    source: str
    lowered: Lowered

    @property
    def outline(self):
        return self.lowered.outlines[0]

    @property
    def system(self):
        return self.lowered.system()


def _withdraw_outcome(balance: int, a: int) -> tuple[int, int]:
    """(amount paid, balance after) of one checked Withdraw(a)."""
    return (a, balance - a) if balance >= a else (0, balance)


def final_balance(n: int, a: int) -> int:
    """Balance after the outer Withdraw and the reentrant one, decrement first."""
    _, b1 = _withdraw_outcome(n, a)
    _, b2 = _withdraw_outcome(b1, a)
    return b2


def _bank(name, wd, pay, ret, amt, out, ack, fixed: bool, a: int) -> str:
    check = (f"  loc l1: when bal >= {amt} do {out} := {amt} goto l2\n"
             f"          when bal < {amt} do {out} := 0 goto l2\n")
    if a == 0:
        # nothing is ever paid out, so the balance is left alone
        body = (f"  loc l2: when top do {pay}!{out} goto l3\n"
                f"  loc l3: when top do {ret}?{ack} goto l5\n")
    elif fixed:
        body = (f"  loc l2: when top do bal := bal - {out} goto l3\n"
                f"  loc l3: when top do {pay}!{out} goto l4\n"
                f"  loc l4: when top do {ret}?{ack} goto l5\n")
    else:
        body = (f"  loc l2: when top do {pay}!{out} goto l3\n"
                f"  loc l3: when top do {ret}?{ack} goto l4\n"
                f"  loc l4: when top do bal := bal - {out} goto l5\n")
    return (f"program {name} {{\n"
            f"  var {amt} : amt = 0\n  var {out} : amt = 0\n  var {ack} : amt = 0\n"
            f"  start l0\n"
            f"  loc l0: when top do {wd}?{amt} goto l1\n"
            f"{check}{body}  loc l5\n}}\n")


MALICIOUS = """program Malicious {{
  var r1 : amt = 0
  var r2 : amt = 0
  var got : loot = 0
  start m0
  loc m0: when top do wd!{a} goto m1
  loc m1: when top do pay?r1 goto m2
  loc m2: when top do got := got + r1 goto m3
  loc m3: when top do wd2!{a} goto m4
  loc m4: when top do pay2?r2 goto m5
  loc m5: when top do got := got + r2 goto m6
  loc m6: when top do ret2!0 goto m7
  loc m7: when top do ret!0 goto m8
  loc m8
}}
"""


def _num(v: int) -> str:
    return str(v)


def _annotations(rows, foreign: str, gained: dict) -> str:
    """``at`` lines; each location's native env lists the communications so far."""
    lines, env = [], []
    for loc, spatial in rows:
        if loc in gained:
            env.append(gained[loc])
        native = " & ".join(env + [spatial])
        lines.append(f"        at {loc} {{ {foreign}, {native} }}")
    return "\n".join(lines)


def _bank_rows(amt, out, ack, locs: dict) -> list:
    rows = []
    for loc, (bal, amt_v, out_v, ack_v) in locs.items():
        cells = [] if bal is None else [f"bal |-> {bal}"]
        cells += [f"{amt} |-> {amt_v}", f"{out} |-> {out_v}", f"{ack} |-> {ack_v}"]
        rows.append((loc, " * ".join(cells)))
    return rows


def _bank_gained(wd, pay, ret, amt, out, ack, fixed: bool, a: int) -> dict:
    if a == 0:
        return {"l1": f"{wd}?{amt}", "l3": f"{pay}!{out}", "l5": f"{ret}?{ack}"}
    if fixed:
        return {"l1": f"{wd}?{amt}", "l4": f"{pay}!{out}", "l5": f"{ret}?{ack}"}
    return {"l1": f"{wd}?{amt}", "l3": f"{pay}!{out}", "l4": f"{ret}?{ack}"}


def _source(n: int, a: int, fixed: bool) -> str:
    if n < 0 or a < 0:
        raise ValueError("balance and amount must be non-negative")
    out1, b1 = _withdraw_outcome(n, a)
    if fixed or a == 0:
        out2, b2 = _withdraw_outcome(b1, a)
    else:
        # verified on its own, the shadow assumes it holds the untouched balance
        out2, b2 = _withdraw_outcome(n, a)
    fin = final_balance(n, a)
    amounts = sorted({0, a})
    lo, hi = -2 * a, n + a
    parts = [
        f"// MyBank with a reentrant attacker: n = {n}, a = {a}, "
        f"{'fixed' if fixed else 'vulnerable'} ordering.\n",
        f"type amt = {{{', '.join(map(str, amounts))}}}\n",
        f"type money = {lo}..{hi}\n",
        f"type loot = 0..{2 * a}\n",
        "chan wd cap 1 dom amt\nchan pay cap 1 dom amt\nchan ret cap 1 dom amt\n",
        "chan wd2 cap 1 dom amt\nchan pay2 cap 1 dom amt\nchan ret2 cap 1 dom amt\n",
        f"var bal : money = {n}\n",
        "invariant RI_b (bal) : bal >= 0\n\n",
        _bank("Bank", "wd", "pay", "ret", "amt", "out", "ack", fixed, a), "\n",
        MALICIOUS.format(a=a), "\n",
        _bank("Shadow", "wd2", "pay2", "ret2", "amt2", "out2", "ack2", fixed, a), "\n",
    ]
    transfer = fixed and a > 0
    # -- annotations ----------------------------------------------------------
    bank_f = f"wd!{a} & ret!0"
    if a == 0:
        bank_locs = {"l0": (n, "-", "-", "-"), "l1": (n, a, "-", "-"), "l2": (n, a, 0, "-"),
                     "l3": (n, a, 0, "-"), "l5": (n, a, 0, 0)}
        shadow_locs = {"l0": (None, "-", "-", "-"), "l1": (None, a, "-", "-"),
                       "l2": (None, a, 0, "-"), "l3": (None, a, 0, "-"), "l5": (None, a, 0, 0)}
        bank_locs = {k: (None,) + v[1:] for k, v in bank_locs.items()}
    elif fixed:
        bank_locs = {"l0": (n, "-", "-", "-"), "l1": (n, a, "-", "-"), "l2": (n, a, out1, "-"),
                     "l3": (b1, a, out1, "-"), "l4": (None, a, out1, "-"),
                     "l5": (None, a, out1, 0)}
        shadow_locs = {"l0": (None, "-", "-", "-"), "l1": (b1, a, "-", "-"),
                       "l2": (b1, a, out2, "-"), "l3": (b2, a, out2, "-"),
                       "l4": (b2, a, out2, "-"), "l5": (b2, a, out2, 0)}
    else:
        bank_locs = {"l0": (n, "-", "-", "-"), "l1": (n, a, "-", "-"), "l2": (n, a, out1, "-"),
                     "l3": (n, a, out1, "-"), "l4": (n, a, out1, 0), "l5": (b1, a, out1, 0)}
        shadow_locs = {"l0": (n, "-", "-", "-"), "l1": (n, a, "-", "-"),
                       "l2": (n, a, out2, "-"), "l3": (n, a, out2, "-"),
                       "l4": (n, a, out2, 0), "l5": (b2, a, out2, 0)}
    mal_f = "pay!out & pay2!out2"
    bal_m = f"bal |-> {b1} * " if transfer else ""
    mal = {
        "m0": "got |-> 0 * r1 |-> - * r2 |-> -",
        "m1": "got |-> 0 * r1 |-> - * r2 |-> -",
        "m2": f"{bal_m}got |-> 0 * r1 |-> - * r2 |-> -",
        "m3": f"{bal_m}got |-> - * r1 |-> - * r2 |-> - & got == r1",
        "m4": "got |-> - * r1 |-> - * r2 |-> - & got == r1",
        "m5": "got |-> - * r1 |-> - * r2 |-> - & got == r1",
        "m6": "got |-> - * r1 |-> - * r2 |-> - & got == r1 + r2",
        "m7": "got |-> - * r1 |-> - * r2 |-> - & got == r1 + r2",
        "m8": "got |-> - * r1 |-> - * r2 |-> - & got == r1 + r2",
    }
    mal_gained = {"m1": f"wd!{a}", "m2": "pay?r1", "m4": f"wd2!{a}", "m5": "pay2?r2",
                  "m7": "ret2!0", "m8": "ret!0"}
    mal_text = _annotations(list(mal.items()), mal_f, mal_gained)
    bank_text = _annotations(_bank_rows("amt", "out", "ack", bank_locs), bank_f,
                             _bank_gained("wd", "pay", "ret", "amt", "out", "ack", fixed, a))
    shadow_text = _annotations(_bank_rows("amt2", "out2", "ack2", shadow_locs),
                               f"wd2!{a} & ret2!0",
                               _bank_gained("wd2", "pay2", "ret2", "amt2", "out2", "ack2", fixed,
                                            a))
    payloads = ""
    if transfer:
        payloads = f"  payload pay : bal |-> {b1}\n  payload wd2 : bal |-> {b1}\n"
    pre = f"bal |-> {n}"
    post = f"RI_b & bal == {fin}"
    parts.append(
        f"outline withdraw {{\n"
        f"  target {{ {pre} }} Bank || Malicious || Shadow {{ {post} }}\n"
        f"{payloads}"
        f"  proof envcomp {{\n"
        f"    seq Bank {{\n{bank_text}\n    }}\n"
        f"    seq Malicious {{\n{mal_text}\n    }}\n"
        f"    seq Shadow {{\n"
        f"{shadow_text}\n"
        f"    }}\n"
        f"  }}\n}}\n")
    return "".join(parts)


def build_vulnerable_model(n: int, a: int) -> ContractModel:
    src = _source(n, a, fixed=False)
    return ContractModel("vulnerable", n, a, src, load(src))


def build_fixed_model(n: int, a: int) -> ContractModel:
    src = _source(n, a, fixed=True)
    return ContractModel("fixed", n, a, src, load(src))


def build_model(variant: str, n: int, a: int) -> ContractModel:
    if variant == "vulnerable":
        return build_vulnerable_model(n, a)
    if variant == "fixed":
        return build_fixed_model(n, a)
    raise ValueError(f"unknown variant {variant!r}")


def annotate_deposit(n: int, values) -> ContractModel:
    """A client making sequential deposits, with the per-step Deposit outline."""
    values = list(values)
    total = n + sum(values)
    dom = sorted(set(values) | {0})
    lines = [
        f"type amt = {{{', '.join(map(str, dom))}}}\n",
        f"type money = 0..{max(total, n)}\n",
        "".join(f"chan dep{i} cap 1 dom amt\n" for i in range(len(values))),
        f"var bal : money = {n}\n\n",
        "program Client {\n  start k0\n",
    ]
    for i, v in enumerate(values):
        lines.append(f"  loc k{i}: when top do dep{i}!{v} goto k{i + 1}\n")
    lines.append(f"  loc k{len(values)}\n}}\n\n")
    lines.append("program Deposit {\n  var msg : amt = 0\n  start d0\n")
    for i in range(len(values)):
        lines.append(f"  loc d{2 * i}: when top do dep{i}?msg goto d{2 * i + 1}\n")
        lines.append(f"  loc d{2 * i + 1}: when top do bal := bal + msg goto d{2 * i + 2}\n")
    lines.append(f"  loc d{2 * len(values)}\n}}\n\n")
    sends = " & ".join(f"dep{i}!{v}" for i, v in enumerate(values)) or "top"
    rows, running = [], n
    for i, v in enumerate(values):
        rows.append((f"d{2 * i}", f"bal |-> {running} * msg |-> -"))
        rows.append((f"d{2 * i + 1}", f"bal |-> {running} * msg |-> {v}"))
        running += v
    rows.append((f"d{2 * len(values)}", f"bal |-> {running} * msg |-> -"))
    deposit = _annotations(rows, sends, {f"d{2 * i + 1}": f"dep{i}?msg"
                                         for i in range(len(values))})
    client = _annotations([(f"k{i}", "emp") for i in range(len(values) + 1)], "top",
                          {f"k{i + 1}": f"dep{i}!{v}" for i, v in enumerate(values)})
    lines.append(
        "outline deposit {\n"
        f"  target {{ bal |-> {n} }} Client || Deposit {{ bal == {total} }}\n"
        "  proof envcomp {\n"
        f"    seq Client {{\n{client}\n    }}\n"
        f"    seq Deposit {{\n{deposit}\n    }}\n"
        "  }\n}\n")
    src = "".join(lines)
    return ContractModel("deposit", n, sum(values), src, load(src))


@dataclass
class ContractRun:
    model: ContractModel
    report: CheckReport
    verdict: Verdict
    final: Optional[dict] = None  # replayed final cells when a counterexample exists

    def to_json(self) -> dict:
        out = {
            "variant": self.model.variant, "n": self.model.n, "a": self.model.a,
            "check": self.report.to_json(), "explore": self.verdict.to_json(),
        }
        if self.final is not None:
            out["replay"] = self.final
        return out


def run_contract(variant: str, n: int, a: int, max_depth: int = 1000) -> ContractRun:
    model = build_model(variant, n, a)
    report = check_outline(model.outline, model.lowered)
    task = task_for_outline(model.outline, model.lowered, max_depth=max_depth)
    verdict = explore(task)
    final = None
    if verdict.counterexample is not None:
        config = replay(verdict.counterexample, task.system)
        final = {"bal": config.heap.get("bal"), "got": config.heap.get("got"),
                 "violation": verdict.counterexample.violation}
    return ContractRun(model, report, verdict, final)
