"""Desk-scale Hashgraph: event DAG, gossip, virtual voting and the ledger T.

The consensus rules (the >2n/3 supermajority, round advance, fame election,
round received) follow the standard Hashgraph algorithm for an honest
network without forks. Timestamps are per-creator logical counters, ``H`` is 64-bit
FNV-1a over a canonical JSON serialization, and coin rounds use a bit of the
voting event's hash instead of a signature.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
COIN_PERIOD = 10


class HashgraphError(Exception):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def event_hash(creator: int, ts: int, tx, sh: Optional[str], oh: Optional[str]) -> str:
    blob = json.dumps([creator, ts, sorted(tx), sh, oh], separators=(",", ":"))
    return f"{fnv1a64(blob.encode()):016x}"


@dataclass(frozen=True)
class Event:
    """``<TS, TX, SH, OH>`` plus the creator tag standing in for a signature."""

    creator: int
    ts: int
    tx: tuple[str, ...]
    sh: Optional[str]
    oh: Optional[str]
    hash: str

    @staticmethod
    def make(creator, ts, tx, sh, oh) -> "Event":
        tx = tuple(sorted(tx))
        return Event(creator, ts, tx, sh, oh, event_hash(creator, ts, tx, sh, oh))

    def parents(self) -> tuple[str, ...]:
        return tuple(p for p in (self.sh, self.oh) if p is not None)

    def to_json(self) -> dict:
        return {"creator": self.creator, "ts": self.ts, "tx": list(self.tx), "sh": self.sh,
                "oh": self.oh, "hash": self.hash}

    @staticmethod
    def from_json(d: dict) -> "Event":
        return Event(d["creator"], d["ts"], tuple(d["tx"]), d["sh"], d["oh"], d["hash"])


class EventGraph:
    """Events keyed by hash, with per-creator chains, in insertion (topological) order."""

    def __init__(self, n: int):
        if n < 1:
            raise HashgraphError("a network needs at least one node")
        self.n = n
        self.events: dict[str, Event] = {}
        self.chains: dict[int, list[str]] = {i: [] for i in range(n)}
        self.order: list[str] = []
        self._anc: dict[str, int] = {}  # ancestor-or-self bitmask over insertion indices
        self._index: dict[str, int] = {}

    def __contains__(self, h) -> bool:
        return h in self.events

    def __len__(self):
        return len(self.order)

    def add(self, e: Event) -> Event:
        if e.hash in self.events:
            return self.events[e.hash]
        if not 0 <= e.creator < self.n:
            raise HashgraphError(f"unknown creator {e.creator}")
        if e.hash != event_hash(e.creator, e.ts, e.tx, e.sh, e.oh):
            raise HashgraphError(f"event {e.hash} does not hash to itself")
        chain = self.chains[e.creator]
        expected = chain[-1] if chain else None
        if e.sh != expected:
            raise HashgraphError(f"event {e.hash}: self-parent must be {expected}")
        if e.oh is not None and e.oh not in self.events:
            raise HashgraphError(f"event {e.hash}: dangling other-parent {e.oh}")
        k = len(self.order)
        mask = 1 << k
        for p in e.parents():
            mask |= self._anc[p]
        self.events[e.hash] = e
        self.order.append(e.hash)
        self._index[e.hash] = k
        self._anc[e.hash] = mask
        chain.append(e.hash)
        return e

    def create_event(self, node: int, other_parent: Optional[str], tx=()) -> Event:
        """New event on ``node``: self-parent is its last event, TS its next clock value."""
        if other_parent is not None and other_parent not in self.events:
            raise HashgraphError(f"dangling other-parent {other_parent}")
        chain = self.chains[node]
        sh = chain[-1] if chain else None
        ts = self.events[sh].ts + 1 if sh else 0
        return self.add(Event.make(node, ts, tx, sh, other_parent))

    def last(self, node: int) -> Optional[str]:
        chain = self.chains[node]
        return chain[-1] if chain else None

    def merge(self, other: "EventGraph"):
        """Learn every event ``other`` knows (gossip), in its topological order."""
        for h in other.order:
            if h not in self.events:
                self.add(other.events[h])

    def see(self, x: str, y: str) -> bool:
        """``y`` is an ancestor of ``x`` or ``x`` itself."""
        return bool(self._anc[x] >> self._index[y] & 1)

    def strongly_see(self, x: str, y: str) -> bool:
        """``x`` sees ``y`` through events by more than 2n/3 distinct creators."""
        if not self.see(x, y):
            return False
        creators = set()
        for z in self.order:
            if self.see(x, z) and self.see(z, y):
                creators.add(self.events[z].creator)
        return supermajority(len(creators), self.n)

    def verify_chain(self) -> bool:
        """Recompute every hash and check each SH names the previous chain event."""
        for node, chain in self.chains.items():
            prev = None
            for h in chain:
                e = self.events[h]
                if e.hash != event_hash(e.creator, e.ts, e.tx, e.sh, e.oh):
                    return False
                if e.sh != prev or e.creator != node:
                    return False
                prev = h
        return True

    def to_json(self) -> dict:
        return {"nodes": self.n, "events": [self.events[h].to_json() for h in self.order]}

    @staticmethod
    def from_json(d: dict) -> "EventGraph":
        g = EventGraph(d["nodes"])
        for e in d["events"]:
            g.add(Event.from_json(e))
        return g

    def copy(self) -> "EventGraph":
        g = EventGraph(self.n)
        g.merge(self)
        return g


def supermajority(count: int, n: int) -> bool:
    return 3 * count > 2 * n


# ---------------------------------------------------------------------------
# rounds, witnesses, virtual voting


@dataclass(frozen=True)
class Ballot:
    """A virtual vote of witness ``voter`` on witness ``candidate``."""

    voter: str
    candidate: str
    value: bool
    round: int

    def to_json(self) -> dict:
        return {"voter": self.voter, "candidate": self.candidate, "value": self.value,
                "round": self.round}


@dataclass
class Consensus:
    rounds: dict[str, int] = field(default_factory=dict)
    witness: dict[str, bool] = field(default_factory=dict)
    famous: dict[str, bool] = field(default_factory=dict)
    ballots: list[Ballot] = field(default_factory=list)
    coin_used: bool = False

    def witnesses(self, r: int) -> list[str]:
        return [h for h, rr in self.rounds.items() if rr == r and self.witness[h]]

    @property
    def max_round(self) -> int:
        return max(self.rounds.values(), default=0)


def assign_rounds(g: EventGraph) -> Consensus:
    c = Consensus()
    for h in g.order:
        e = g.events[h]
        if not e.parents():
            r = 1
        else:
            r = max(c.rounds[p] for p in e.parents())
            seen = {g.events[w].creator for w in c.witnesses(r) if g.strongly_see(h, w)}
            if supermajority(len(seen), g.n):
                r += 1
        c.rounds[h] = r
        c.witness[h] = e.sh is None or r > c.rounds[e.sh]
    return c


def vote(g: EventGraph, c: Consensus, e: str, e2: str) -> Ballot:
    """First-round ballot of witness ``e`` on witness ``e2``: yes iff ``e`` sees ``e2``."""
    if not (c.witness.get(e) and c.witness.get(e2)):
        raise HashgraphError("only witnesses vote, and only on witnesses")
    return Ballot(e, e2, g.see(e, e2), c.rounds[e])


def _coin(h: str) -> bool:
    return bool(int(h, 16) >> 32 & 1)


def elect_famous(g: EventGraph, c: Consensus) -> Consensus:
    """Decide fame of witnesses by virtual voting."""
    votes: dict[tuple[str, str], bool] = {}
    by_round = {r: c.witnesses(r) for r in range(1, c.max_round + 1)}
    for rx in range(1, c.max_round + 1):
        for x in by_round[rx]:
            decided = False
            for ry in range(rx + 1, c.max_round + 1):
                if decided:
                    break
                for y in by_round[ry]:
                    d = ry - rx
                    if d == 1:
                        b = vote(g, c, y, x)
                        c.ballots.append(b)
                        votes[(y, x)] = b.value
                        continue
                    s = [w for w in by_round[ry - 1] if g.strongly_see(y, w)]
                    yes = sum(1 for w in s if votes[(w, x)])
                    no = len(s) - yes
                    v, t = yes >= no, max(yes, no)
                    if d % COIN_PERIOD:
                        votes[(y, x)] = v
                        if supermajority(t, g.n):
                            c.famous[x] = v
                            decided = True
                            break
                    elif supermajority(t, g.n):
                        votes[(y, x)] = v
                    else:
                        c.coin_used = True
                        votes[(y, x)] = _coin(y)
    return c


def consensus(g: EventGraph) -> Consensus:
    return elect_famous(g, assign_rounds(g))


# ---------------------------------------------------------------------------
# the ledger


@dataclass
class TransactionLedger:
    """Append-only transaction list T with the accepted events."""

    T: list[str] = field(default_factory=list)
    accepted: dict[str, int] = field(default_factory=dict)  # event hash -> round received
    processed: int = 0  # rounds whose received events are final

    def snapshot(self) -> tuple[str, ...]:
        return tuple(self.T)


def round_received(g: EventGraph, c: Consensus, ledger: TransactionLedger) -> TransactionLedger:
    """Append the events received in newly decided rounds.

    Round ``r`` is decided once every known witness of ``r`` has its fame
    decided; rounds are processed in order. An event is received in ``r`` when
    every famous witness of ``r`` descends from it. Each batch enters T by
    (TS, hash).
    """
    r = ledger.processed + 1
    while r <= c.max_round:
        ws = c.witnesses(r)
        if not ws or any(w not in c.famous for w in ws):
            break
        fam = [w for w in ws if c.famous[w]]
        if fam:
            batch = [h for h in g.order if h not in ledger.accepted
                     and all(g.see(f, h) for f in fam)]
            batch.sort(key=lambda h: (g.events[h].ts, h))
            for h in batch:
                ledger.accepted[h] = r
                ledger.T.extend(g.events[h].tx)
        ledger.processed = r
        r += 1
    return ledger


def check_acceptance(g: EventGraph, ledger: TransactionLedger) -> bool:
    """Accepted events have all their transactions in T; the others have none."""
    in_t = set(ledger.T)
    if len(in_t) != len(ledger.T):
        return False
    for h, e in g.events.items():
        if h in ledger.accepted:
            if not all(t in in_t for t in e.tx):
                return False
        elif any(t in in_t for t in e.tx):
            return False
    return True


# ---------------------------------------------------------------------------
# gossip


@dataclass
class NodeState:
    graph: EventGraph
    ledger: TransactionLedger
    pending: list[str]
    decisions: dict[str, bool] = field(default_factory=dict)  # first fame decision seen
    history: list[tuple[str, ...]] = field(default_factory=list)  # T after each update
    ballots: list[Ballot] = field(default_factory=list)

    def refresh(self):
        c = consensus(self.graph)
        for w, v in c.famous.items():
            self.decisions.setdefault(w, v)
        self.ballots = c.ballots
        before = self.ledger.snapshot()
        round_received(self.graph, c, self.ledger)
        if self.ledger.snapshot()[:len(before)] != before:
            raise HashgraphError("ledger entries changed after being appended")
        self.history.append(self.ledger.snapshot())
        return c


@dataclass
class HashgraphRun:
    nodes: int
    events: int
    seed: int
    states: list[NodeState]
    schedule: list[tuple[int, int]]

    @property
    def ledgers(self) -> list[list[str]]:
        return [list(s.ledger.T) for s in self.states]

    def consistent(self) -> bool:
        first = self.ledgers[0]
        return all(t == first for t in self.ledgers)

    def chains_ok(self) -> bool:
        return all(s.graph.verify_chain() for s in self.states)

    def acceptance_ok(self) -> bool:
        return all(check_acceptance(s.graph, s.ledger) for s in self.states)

    def elections_agree(self) -> bool:
        merged: dict[str, bool] = {}
        for s in self.states:
            for w, v in s.decisions.items():
                if merged.setdefault(w, v) != v:
                    return False
        return True

    def ballots_ok(self) -> bool:
        """Every ballot is cast by a witness on a witness; it is affirmative
        exactly when the voter (eventually, i.e. in the final graph) sees the
        candidate."""
        for s in self.states:
            c = assign_rounds(s.graph)
            for b in s.ballots:
                if not (c.witness[b.voter] and c.witness[b.candidate]):
                    return False
                if b.value != s.graph.see(b.voter, b.candidate):
                    return False
        return True

    def to_json(self) -> dict:
        g = self.states[0].graph
        return {
            "nodes": self.nodes, "events": self.events, "seed": self.seed,
            "schedule": [list(p) for p in self.schedule],
            "graph": g.to_json(),
            "T": self.ledgers,
            "consistent": self.consistent(),
            "hash_chain_ok": self.chains_ok(),
            "acceptance_ok": self.acceptance_ok(),
            "elections_agree": self.elections_agree(),
            "accepted": {h: r for h, r in sorted(self.states[0].ledger.accepted.items())},
        }


def simulate(nodes: int = 4, events: int = 12, seed: int = 1, txs_per_node: int = 2
             ) -> HashgraphRun:
    """Seeded gossip run creating ``events`` events in total.

    Every node first creates its genesis event. Then, per step, a random node
    syncs with a random partner (learns all its events) and creates an event
    whose other-parent is the partner's latest. A final exchange gives every
    node every event; T is updated after each change and checked to grow
    append-only.
    """
    if events < nodes:
        raise HashgraphError("need at least one genesis event per node")
    rng = random.Random(seed)
    states = []
    for i in range(nodes):
        pool = [f"tx{i}.{k}" for k in range(txs_per_node)]
        states.append(NodeState(EventGraph(nodes), TransactionLedger(), pool))
    for i, s in enumerate(states):
        s.graph.create_event(i, None, _take(s))
    schedule = []
    for _ in range(events - nodes):
        i = rng.randrange(nodes)
        j = rng.choice([k for k in range(nodes) if k != i]) if nodes > 1 else i
        me, other = states[i], states[j]
        me.graph.merge(other.graph)
        me.graph.create_event(i, other.graph.last(j) if j != i else None, _take(me))
        schedule.append((i, j))
        me.refresh()
    everything = EventGraph(nodes)
    for s in states:
        everything.merge(s.graph)
    for s in states:
        s.graph.merge(everything)
        s.refresh()
    return HashgraphRun(nodes, events, seed, states, schedule)


def _take(s: NodeState) -> tuple[str, ...]:
    return (s.pending.pop(0),) if s.pending else ()


# ---------------------------------------------------------------------------
# network specification in the DSL


def network_source(nodes: int = 4, txs: int = 1) -> str:
    """DSL model of the network with its node-composed consensus triple.

    Each node runs a broadcaster, which takes its client transactions
    (``#TX``) and sends its event to every other node, and a receiver, which
    takes every other node's event and then accepts its own. Receiving
    ``E^j`` on ``N_i`` is the round-received action ``RR_Ej`` there.
    """
    n = nodes
    lines = [f"// {n}-node Hashgraph network: broadcast and receive programs per node.\n"]
    for i in range(n):
        for j in range(n):
            if i != j:
                lines.append(f"chan c_{i}_{j} cap 1 dom bool\n")
    lines.append("\n")
    for i in range(n):
        others = [j for j in range(n) if j != i]
        b = [f"node N{i} {{\n", f"  program B{i} {{\n    var e{i} : bool = 1\n    start b0\n"]
        k = 0
        for t in range(txs):
            b.append(f"    loc b{k}: when top do skip as TX{i}_{t} goto b{k + 1}\n")
            k += 1
        for j in others:
            b.append(f"    loc b{k}: when top do c_{i}_{j}!e{i} goto b{k + 1}\n")
            k += 1
        b.append(f"    loc b{k}\n  }}\n")
        r = [f"  program R{i} {{\n"]
        for j in others:
            r.append(f"    var x{i}_{j} : bool = 0\n")
        r.append(f"    var acc{i} : bool = 0\n    start r0\n")
        k = 0
        for j in others:
            r.append(f"    loc r{k}: when top do c_{j}_{i}?x{i}_{j} as RR_E{j} goto r{k + 1}\n")
            k += 1
        r.append(f"    loc r{k}: when top do acc{i} := 1 as RR_E{i} goto r{k + 1}\n")
        r.append(f"    loc r{k + 1}\n  }}\n}}\n\n")
        lines += b + r
    lines.append(_network_outline(n, txs))
    return "".join(lines)


def node_post(i: int, n: int) -> tuple[str, str]:
    """(foreign, native) parts of P(N_i)'."""
    foreign = " & ".join(f"<>#RR_E{i}@N{j}" for j in range(n) if j != i) or "top"
    native = f"<>#RR_E{i}@N{i} & acc{i} == 1"
    return foreign, native


def _network_outline(n: int, txs: int) -> str:
    out = ["outline consensus {\n"]
    code = " ||N ".join(f"(B{i} || R{i})@N{i}" for i in range(n))
    post = " & ".join(f"#RR_E{j}@N{i}" for i in range(n) for j in range(n))
    post += " & " + " & ".join(f"acc{i} == 1" for i in range(n))
    out.append(f"  target {{ emp }} {code} {{ {post} }}\n")
    out.append("  proof nodecomp {\n")
    for i in range(n):
        others = [j for j in range(n) if j != i]
        sends = [f"c_{j}_{i}!e{j}@N{j}" for j in others]
        gamma = " & ".join(sends) if sends else "top"
        rr_foreign, _ = node_post(i, n)
        out.append(f"    nodeenv N{i} {{\n")
        # broadcaster
        out.append(f"      seq B{i} {{\n")
        env, k = [], 0
        out.append(f"        at b0 {{ top, e{i} |-> 1 }}\n")
        for t in range(txs):
            env.append(f"#TX{i}_{t}@N{i}")
            k += 1
            out.append(f"        at b{k} {{ top, {' & '.join(env)} & e{i} |-> 1 }}\n")
        for j in others:
            env.append(f"c_{i}_{j}!e{i}@N{i}")
            k += 1
            out.append(f"        at b{k} {{ top, {' & '.join(env)} & e{i} |-> 1 }}\n")
        out.append("      }\n")
        # receiver
        cells = " * ".join([f"x{i}_{j} |-> -" for j in others] + [f"acc{i} |-> -"])
        out.append(f"      seq R{i} {{\n")
        env = []
        out.append(f"        at r0 {{ {gamma}, {cells} }}\n")
        for k, j in enumerate(others):
            env.append(f"#RR_E{j}@N{i}")
            out.append(f"        at r{k + 1} {{ {gamma}, {' & '.join(env)} & {cells} }}\n")
        env.append(f"#RR_E{i}@N{i}")
        last = len(others) + 1
        out.append(f"        at r{last} {{ {gamma}, {' & '.join(env)} & {cells} & acc{i} == 1 }}\n")
        out.append("      }\n    }\n")
    out.append("  }\n}\n")
    return "".join(out)


def build_network_spec(nodes: int = 4, txs: int = 1):
    """(lowered model, outline) of the network specification."""
    from dvl.dsl.lower import load

    low = load(network_source(nodes, txs))
    return low, low.outlines[0]


# ---------------------------------------------------------------------------
# bundled fixture

# name -> (creator, self-parent name, other-parent name); created in this order.
FIXTURE_SHAPE = (
    ("a0", 0, None, None), ("b0", 1, None, None), ("c0", 2, None, None), ("d0", 3, None, None),
    ("a1", 0, "a0", "b0"), ("b1", 1, "b0", "a1"), ("c1", 2, "c0", "b1"), ("d1", 3, "d0", "c1"),
    ("a2", 0, "a1", "d1"), ("b2", 1, "b1", "a2"), ("c2", 2, "c1", "b2"), ("d2", 3, "d1", "c2"),
)


def fixture_graph() -> tuple[EventGraph, dict[str, str]]:
    """The 4-node, 12-event graph with one transaction per event.

    Returns the graph and the name -> hash map.
    """
    g = EventGraph(4)
    names: dict[str, str] = {}
    for name, creator, sh, oh in FIXTURE_SHAPE:
        e = g.create_event(creator, names.get(oh) if oh else None, (f"t_{name}",))
        if e.sh != (names[sh] if sh else None):
            raise HashgraphError("fixture shape out of order")
        names[name] = e.hash
    return g, names


@dataclass
class ExhaustiveRun:
    source: str
    report: object  # CheckReport
    verdict: object  # explorer Verdict

    @property
    def ok(self) -> bool:
        return self.report.verdict == "verified" and self.verdict.kind == "valid"

    def to_json(self) -> dict:
        return {"check": self.report.to_json(), "explore": self.verdict.to_json()}


def run_exhaustive(nodes: int = 4, txs: int = 1, max_depth: int = 200) -> ExhaustiveRun:
    """Check the network outline and explore every interleaving of the network."""
    from dvl.checker import check_outline
    from dvl.explorer import explore, task_for_outline

    low, outline = build_network_spec(nodes, txs)
    report = check_outline(outline, low)
    verdict = explore(task_for_outline(outline, low, max_depth=max_depth))
    return ExhaustiveRun(network_source(nodes, txs), report, verdict)
