"""``dvl`` command-line driver.

Subcommands:

* ``check FILE``: check every proof outline (exit 0 verified, 1 refuted,
  2 unknown, 3 parse or IO failure);
* ``explore FILE``: explore the target of every outline (exit 0 valid,
  1 invalid, 2 bound exceeded, 3 parse or IO failure);
* ``hashgraph``: seeded gossip run, or ``--exhaustive`` exploration of the
  network specification;
* ``contract``: build, check and explore the MyBank model.

Human-readable output goes to stdout. ``--json`` prints the run report as JSON
instead, and ``--out DIR`` (or the ``DVL_OUT`` environment variable) writes
the report and artifacts to files.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from dvl import __version__

EXIT_OK, EXIT_FAIL, EXIT_UNKNOWN, EXIT_ERROR = 0, 1, 2, 3
CHECK_CODES = {"verified": EXIT_OK, "refuted": EXIT_FAIL, "unknown": EXIT_UNKNOWN}
EXPLORE_CODES = {"valid": EXIT_OK, "invalid": EXIT_FAIL, "bound_exceeded": EXIT_UNKNOWN}


def combine(codes: Sequence[int]) -> int:
    """Any failure wins over unknown, which wins over success."""
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    if EXIT_FAIL in codes:
        return EXIT_FAIL
    if EXIT_UNKNOWN in codes:
        return EXIT_UNKNOWN
    return EXIT_OK


def check_exit(verdicts: Sequence[str]) -> int:
    return combine([CHECK_CODES[v] for v in verdicts])


def explore_exit(kinds: Sequence[str]) -> int:
    return combine([EXPLORE_CODES[k] for k in kinds])


class InputError(Exception):
    def __init__(self, diagnostics: list[dict]):
        super().__init__("; ".join(d["message"] for d in diagnostics))
        self.diagnostics = diagnostics


def diagnostic(code: str, message: str, line: int = 0, column: int = 0,
               severity: str = "error") -> dict:
    return {"code": code, "severity": severity, "line": line, "column": column,
            "message": message}


def load_file(path: str):
    """(lowered model, raw text); raises :class:`InputError` with diagnostics."""
    from dvl.dsl.lower import LoweringError, load

    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError([diagnostic("IO", f"cannot read {path}: {exc}")]) from exc
    try:
        return load(text), text
    except LoweringError as exc:
        raise InputError([d.to_json() for d in exc.diagnostics]) from exc


def _report(command: str, started: float, **fields) -> dict:
    out = {"tool": "dvl", "version": __version__, "command": command}
    out.update(fields)
    out["wall_time"] = round(time.perf_counter() - started, 6)
    return out


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _out_dir(args) -> Optional[Path]:
    d = args.out or os.environ.get("DVL_OUT")
    if not d:
        return None
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(args, report: dict, human: list[str], name: str) -> None:
    out = _out_dir(args)
    if out is not None:
        _write_json(out / f"{name}.json", report)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for line in human:
            print(line)


def _input_failure(args, command: str, started: float, exc: InputError) -> int:
    report = _report(command, started, input=args.file, diagnostics=exc.diagnostics)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    for d in exc.diagnostics:
        print(f"{args.file}:{d['line']}:{d['column']}: {d['severity']} {d['code']}: "
              f"{d['message']}", file=sys.stderr)
    return EXIT_ERROR


def _selected(lowered, name: Optional[str]):
    if name is None:
        return list(lowered.outlines)
    try:
        return [lowered.outline(name)]
    except KeyError:
        raise InputError([diagnostic("OUTLINE", f"no outline named {name}")]) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(args) -> int:
    from dvl.checker import check_outline

    started = time.perf_counter()
    try:
        lowered, text = load_file(args.file)
        outlines = _selected(lowered, args.outline)
    except InputError as exc:
        return _input_failure(args, "check", started, exc)
    if not outlines:
        return _input_failure(args, "check", started, InputError(
            [diagnostic("OUTLINE", "the model has no proof outline to check")]))
    reports = [check_outline(o, lowered, all_failures=args.all_failures) for o in outlines]
    human = []
    for r in reports:
        human.append(f"outline {r.outline}: {r.verdict}")
        f = r.failing_obligation
        if f is not None:
            human.append(f"  at {f.path} ({f.rule}): {f.message}")
    report = _report("check", started, input=args.file, input_digest=_digest(text),
                     outlines=[r.to_json() for r in reports])
    _emit(args, report, human, Path(args.file).stem + ".check")
    return check_exit([r.verdict for r in reports])


def cmd_explore(args) -> int:
    from dvl.explorer import explore, task_for_outline

    started = time.perf_counter()
    try:
        lowered, text = load_file(args.file)
        outlines = _selected(lowered, args.outline)
    except InputError as exc:
        return _input_failure(args, "explore", started, exc)
    if not outlines:
        return _input_failure(args, "explore", started, InputError(
            [diagnostic("OUTLINE", "the model has no target triple to explore")]))
    trace = None
    if args.trace:
        trace = sys.stdout if args.trace == "-" else open(args.trace, "w", encoding="utf-8")
    results, human = [], []
    try:
        for o in outlines:
            sink = None
            if trace is not None:
                def sink(record, name=o.name):
                    trace.write(json.dumps({"outline": name, **record}, sort_keys=True) + "\n")
            task = task_for_outline(o, lowered, max_depth=args.max_depth, on_event=sink)
            v = explore(task)
            results.append({"outline": o.name, **v.to_json()})
            human.append(f"outline {o.name}: {v.kind} ({v.stats.get('states', 0)} states)")
            cex = v.counterexample
            if cex is not None:
                human.append(f"  {cex.violation}: {cex.message or cex.formula}")
                for step in cex.trace:
                    human.append(f"    {step.program} edge {step.edge}")
    finally:
        if trace is not None and trace is not sys.stdout:
            trace.close()
    report = _report("explore", started, input=args.file, input_digest=_digest(text),
                     explorations=results)
    _emit(args, report, human, Path(args.file).stem + ".explore")
    return explore_exit([r["verdict"] for r in results])


def cmd_hashgraph(args) -> int:
    from dvl.hashgraph import network_source, run_exhaustive, simulate

    started = time.perf_counter()
    if not 1 <= args.nodes <= 4 or args.events < args.nodes or args.txs < 0:
        print("hashgraph: need 1 <= nodes <= 4, events >= nodes and txs >= 0", file=sys.stderr)
        return EXIT_ERROR
    out = _out_dir(args)
    if args.exhaustive:
        run = run_exhaustive(args.nodes, max(args.txs, 1), args.max_depth)
        if out is not None:
            (out / "network.dvl").write_text(run.source, encoding="utf-8")
        report = _report("hashgraph", started, mode="exhaustive", nodes=args.nodes,
                         **run.to_json())
        human = [f"network outline: {run.report.verdict}",
                 f"exploration: {run.verdict.kind} ({run.verdict.stats.get('states', 0)} states)"]
        _emit(args, report, human, "hashgraph")
        return combine([CHECK_CODES[run.report.verdict], EXPLORE_CODES[run.verdict.kind]])
    run = simulate(args.nodes, args.events, args.seed, args.txs)
    data = run.to_json()
    if out is not None:
        (out / "network.dvl").write_text(network_source(args.nodes, 1), encoding="utf-8")
        _write_json(out / "graph.json", data["graph"])
        _write_json(out / "ledger.json", {"T": data["T"], "accepted": data["accepted"]})
    ok = (data["consistent"] and data["hash_chain_ok"] and data["acceptance_ok"]
          and data["elections_agree"])
    report = _report("hashgraph", started, mode="gossip", ok=ok, **data)
    human = [f"seed {args.seed}: {len(run.states[0].graph)} events, "
             f"T = {data['T'][0]}",
             f"consistent: {data['consistent']}, hash chain: {data['hash_chain_ok']}, "
             f"acceptance: {data['acceptance_ok']}, elections agree: {data['elections_agree']}"]
    _emit(args, report, human, "hashgraph")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_contract(args) -> int:
    from dvl.contract import run_contract
    from dvl.explorer import Agreement, validate_report

    started = time.perf_counter()
    if args.n < 0 or args.a < 0:
        print("contract: n and a must be non-negative", file=sys.stderr)
        return EXIT_ERROR
    run = run_contract(args.variant, args.n, args.a, args.max_depth)
    agreement: Agreement = validate_report(run.report, None, run.verdict)
    out = _out_dir(args)
    if out is not None:
        (out / f"mybank_{args.variant}.dvl").write_text(run.model.source, encoding="utf-8")
    report = _report("contract", started, agreement=agreement.to_json(), **run.to_json())
    human = [f"MyBank ({args.variant}, n={args.n}, a={args.a})",
             f"  check: {run.report.verdict}"]
    if run.report.failing_obligation is not None:
        f = run.report.failing_obligation
        human.append(f"    at {f.path} ({f.rule}): {f.message}")
    human.append(f"  explore: {run.verdict.kind}")
    if run.final is not None:
        human.append(f"    replayed final state: bal={run.final['bal']}, "
                     f"attacker received {run.final['got']} ({run.final['violation']})")
    _emit(args, report, human, f"contract_{args.variant}")
    return combine([CHECK_CODES[run.report.verdict], EXPLORE_CODES[run.verdict.kind]])


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 3 so that 2 keeps meaning "unknown"."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dvl", description="Check proof outlines and explore distributed programs.")
    p.add_argument("--version", action="version", version=f"dvl {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--json", action="store_true", help="print the report as JSON")
        sp.add_argument("--out", metavar="DIR", help="write reports and artifacts to DIR")

    c = sub.add_parser("check", help="check the proof outlines of a model")
    c.add_argument("file")
    c.add_argument("--outline", help="check only this outline")
    c.add_argument("--all-failures", action="store_true",
                   help="keep checking after the first failing obligation")
    common(c)
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("explore", help="explore every interleaving of the outline targets")
    e.add_argument("file")
    e.add_argument("--outline", help="explore only this outline's target")
    e.add_argument("--max-depth", type=int, default=1000)
    e.add_argument("--trace", metavar="PATH", help="write NDJSON exploration events ('-' for stdout)")
    common(e)
    e.set_defaults(func=cmd_explore)

    h = sub.add_parser("hashgraph", help="Hashgraph gossip run or exhaustive spec check")
    h.add_argument("--nodes", type=int, default=4)
    h.add_argument("--events", type=int, default=12, help="total events in the run")
    h.add_argument("--seed", type=int, default=1)
    h.add_argument("--txs", type=int, default=1, help="transactions per node")
    h.add_argument("--exhaustive", action="store_true")
    h.add_argument("--max-depth", type=int, default=200)
    common(h)
    h.set_defaults(func=cmd_hashgraph)

    k = sub.add_parser("contract", help="MyBank reentrancy case")
    k.add_argument("--variant", choices=("vulnerable", "fixed"), required=True)
    k.add_argument("--n", type=int, default=100)
    k.add_argument("--a", type=int, default=100)
    k.add_argument("--max-depth", type=int, default=1000)
    common(k)
    k.set_defaults(func=cmd_contract)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "max_depth", 1) <= 0:
        print(f"{args.command}: --max-depth must be positive", file=sys.stderr)
        return EXIT_ERROR
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
