"""Protocol and simulator invariants, asserted over a finished trace.

Each check is a generator of Violation records so a caller can collect
everything wrong with a trace at once. ``check_trace`` runs them all; the
CLI's ``validate-trace`` verb and the test suite both go through it.
"""

from __future__ import annotations

from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator

from .metrics import ENERGY_KINDS, control_frames
from .state import US, BeePhase
from .trace import EventTrace, Record
from .wire import MessageKind

FORWARDED = {MessageKind.RREQ, MessageKind.RREP, MessageKind.LOCAL_RREQ,
             MessageKind.LOCAL_RREP, MessageKind.RERR}

LEGAL_PHASES = {
    (BeePhase.IDLE, BeePhase.SCOUT),
    (BeePhase.SCOUT, BeePhase.EMPLOYED),
    (BeePhase.EMPLOYED, BeePhase.SCOUT),
} | {(p, BeePhase.IDLE) for p in BeePhase}


@dataclass(frozen=True)
class Violation:
    check: str
    time: int
    node: int
    detail: str

    def __str__(self) -> str:
        return f"[{self.check}] t={self.time / US:.6f}s node {self.node}: {self.detail}"


class TraceIndex:
    """Lookups shared by the checks, built lazily from one trace."""

    def __init__(self, trace: EventTrace):
        self.trace = trace
        self.meta = trace.meta

    @cached_property
    def tx(self) -> dict[int, Record]:
        return {r.fields["tx"]: r for r in self.trace.of_kind("tx")}

    @cached_property
    def frames(self) -> dict:
        return control_frames(self.trace)

    @cached_property
    def died(self) -> dict[int, int]:
        return {r.node: r.time for r in self.trace.of_kind("fail")}

    @cached_property
    def neighbors(self) -> dict[int, set[int]]:
        nbrs: dict[int, set[int]] = defaultdict(set)
        topo = self.trace.first("topology")
        for u, v, _ in (topo.fields["edges"] if topo else []):
            nbrs[u].add(v)
            nbrs[v].add(u)
        return nbrs

    def distance(self, source: int, target: int, now: int) -> int | None:
        """Hop distance over nodes alive at ``now``."""
        dead = {n for n, t in self.died.items() if t <= now}
        if source in dead:
            return None
        dist = {source: 0}
        todo = deque([source])
        while todo:
            u = todo.popleft()
            if u == target:
                return dist[u]
            for v in sorted(self.neighbors[u]):
                if v not in dist and v not in dead:
                    dist[v] = dist[u] + 1
                    todo.append(v)
        return None


Check = Callable[[TraceIndex], Iterator[Violation]]
CHECKS: dict[str, Check] = {}


def check(name: str):
    def register(fn: Check) -> Check:
        CHECKS[name] = fn
        return fn
    return register


@check("timestamps")
def timestamps(ix: TraceIndex) -> Iterator[Violation]:
    last = 0
    for r in ix.trace:
        if r.time < last:
            yield Violation("timestamps", r.time, r.node, f"{r.kind} goes back from {last}")
        last = max(last, r.time)


@check("causality")
def causality(ix: TraceIndex) -> Iterator[Violation]:
    per_hop = ix.meta.get("per_hop_us", 0)
    sent = {}
    for r in ix.trace:
        if r.kind == "app_send":
            sent[r.fields["uid"]] = r.time
        elif r.kind == "deliver" and r.fields["uid"] not in sent:
            yield Violation("causality", r.time, r.node, f"uid {r.fields['uid']} delivered, never sent")
        elif r.kind == "rx":
            t = ix.tx.get(r.fields["tx"])
            if t is None or t.time > r.time:
                yield Violation("causality", r.time, r.node, f"rx of unknown or future tx {r.fields['tx']}")
            elif r.time - t.fields["start"] < per_hop:
                yield Violation("causality", r.time, r.node, f"tx {t.fields['tx']} arrived faster than one hop")


@check("silence")
def silence_of_the_dead(ix: TraceIndex) -> Iterator[Violation]:
    for r in ix.trace.of_kind("tx", "rx"):
        died = ix.died.get(r.node)
        if died is not None and r.time > died:
            yield Violation("silence", r.time, r.node, f"{r.kind} after failing at {died}")
        if r.kind == "rx":
            sender_died = ix.died.get(r.fields["sender"])
            start = ix.tx[r.fields["tx"]].fields["start"]
            if sender_died is not None and start >= sender_died:
                yield Violation("silence", r.time, r.node, f"frame from {r.fields['sender']} started after it failed")


@check("hop_monotonicity")
def hop_monotonicity(ix: TraceIndex) -> Iterator[Violation]:
    hop_limit = ix.meta.get("hop_limit", 31)
    last_hop: dict[int, int] = {}
    for r in ix.trace.of_kind("tx"):
        f = r.fields
        parent = ix.tx.get(f["cause"]) if f["cause"] is not None else None
        if f["kind"] == "DATA":
            hop = f["hop"]
            if hop > hop_limit:
                yield Violation("hop_monotonicity", r.time, r.node, f"uid {f['uid']} at hop {hop}")
            if hop < last_hop.get(f["uid"], 0):
                yield Violation("hop_monotonicity", r.time, r.node, f"uid {f['uid']} hop went back to {hop}")
            last_hop[f["uid"]] = hop
            if parent is not None and parent.fields.get("uid") == f["uid"] and hop != parent.fields["hop"] + 1:
                yield Violation("hop_monotonicity", r.time, r.node,
                                f"uid {f['uid']} forwarded at hop {hop} after {parent.fields['hop']}")
            continue
        if parent is None or "hex" not in parent.fields:
            continue
        msg, before = ix.frames[f["tx"]], ix.frames[parent.fields["tx"]]
        same = (msg.kind is before.kind and msg.kind in FORWARDED
                and msg.originator == before.originator and msg.rreq_id == before.rreq_id)
        if same and msg.hop_count != before.hop_count + 1:
            yield Violation("hop_monotonicity", r.time, r.node,
                            f"{msg.kind.name} hop {msg.hop_count} after {before.hop_count}")


@check("duplicate_suppression")
def duplicate_suppression(ix: TraceIndex) -> Iterator[Violation]:
    limit = ix.meta.get("local_copy_limit")
    rreq_cost: dict[tuple, tuple] = {}
    local_paths: dict[tuple, set] = defaultdict(set)
    replies: Counter = Counter()
    for r in ix.trace.of_kind("tx"):
        msg = ix.frames.get(r.fields["tx"])
        if msg is None:
            continue
        key = (r.node, msg.originator, msg.rreq_id)
        if msg.kind is MessageKind.RREQ:
            cost = (msg.hop_count, msg.weak_links, -msg.ael)
            if key in rreq_cost and cost >= rreq_cost[key]:
                yield Violation("duplicate_suppression", r.time, r.node,
                                f"RREQ {msg.originator}/{msg.rreq_id} re-sent without a better cost")
            rreq_cost[key] = min(cost, rreq_cost.get(key, cost))
        elif msg.kind is MessageKind.LOCAL_RREQ:
            if len(set(msg.path)) != len(msg.path):
                yield Violation("duplicate_suppression", r.time, r.node, f"looping record {msg.path}")
            seen = local_paths[key]
            if msg.path in seen:
                yield Violation("duplicate_suppression", r.time, r.node, f"Local_RREQ copy {msg.path} sent twice")
            seen.add(msg.path)
            relayed = len(seen) - (r.node == msg.originator)
            if limit is not None and r.node != msg.originator and relayed > limit:
                yield Violation("duplicate_suppression", r.time, r.node,
                                f"{relayed} Local_RREQ copies relayed, limit {limit}")
        elif msg.kind is MessageKind.LOCAL_RREP and r.node == msg.second_next_hop:
            j = msg.path.index(msg.second_next_hop)
            replies[(key, msg.path[:j])] += 1
            if replies[(key, msg.path[:j])] > 1:
                yield Violation("duplicate_suppression", r.time, r.node, f"second reply to copy {msg.path[:j]}")


@check("locality")
def locality(ix: TraceIndex) -> Iterator[Violation]:
    ttl = ix.meta.get("local_ttl", 3)
    for r in ix.trace.of_kind("tx"):
        msg = ix.frames.get(r.fields["tx"])
        if msg is None or msg.kind is not MessageKind.LOCAL_RREQ:
            continue
        if msg.hop_count > ttl:
            yield Violation("locality", r.time, r.node, f"Local_RREQ at hop {msg.hop_count} > {ttl}")
        d = ix.distance(msg.originator, r.node, r.time)
        if d is None or d > ttl:
            yield Violation("locality", r.time, r.node,
                            f"Local_RREQ sent {d} hops from upstream {msg.originator}")


@check("bypass")
def bypass_correctness(ix: TraceIndex) -> Iterator[Violation]:
    starts = {}
    for r in ix.trace.of_kind("note"):
        f = r.fields
        if f.get("protocol") != "lrabc":
            continue
        if f["event"] == "repair_start":
            starts[(r.node, f["session"])] = f
        elif f["event"] == "repair_end" and f["success"]:
            start = starts.get((r.node, f["session"]))
            path = f["path"]
            if start is None:
                yield Violation("bypass", r.time, r.node, "repair ended without a start")
                continue
            if f["abandoned"] in path:
                yield Violation("bypass", r.time, r.node, f"path {path} runs through {f['abandoned']}")
            if path[0] != r.node or path[-1] != start["snh"]:
                yield Violation("bypass", r.time, r.node, f"path {path} does not join {r.node} to {start['snh']}")
            for u, v in zip(path, path[1:]):
                if v not in ix.neighbors[u]:
                    yield Violation("bypass", r.time, r.node, f"path {path} uses non-edge {u}-{v}")


@check("phase_legality")
def phase_legality(ix: TraceIndex) -> Iterator[Violation]:
    phase: dict[tuple, BeePhase] = {}
    for r in ix.trace:
        if r.kind == "note" and r.fields.get("event") == "phase":
            f = r.fields
            key = (r.node, f["upstream"], f["rreq_id"])
            old, new = BeePhase(f["from"]), BeePhase(f["to"])
            if old is not phase.get(key, BeePhase.IDLE):
                yield Violation("phase_legality", r.time, r.node,
                                f"claims {old.value}, was {phase.get(key, BeePhase.IDLE).value}")
            if (old, new) not in LEGAL_PHASES:
                yield Violation("phase_legality", r.time, r.node, f"{old.value} -> {new.value}")
            if (old, new) == (BeePhase.SCOUT, BeePhase.EMPLOYED) and f["cause"] != "local_rrep":
                yield Violation("phase_legality", r.time, r.node, f"employed without a Local_RREP ({f['cause']})")
            phase[key] = new
        elif r.kind == "tx" and r.fields["kind"] == "LOCAL_RREP":
            msg = ix.frames[r.fields["tx"]]
            if r.node == msg.second_next_hop:
                continue
            if phase.get((r.node, msg.originator, msg.rreq_id), BeePhase.IDLE) is BeePhase.IDLE:
                yield Violation("phase_legality", r.time, r.node, "forwarded a Local_RREP while idle")


@check("rerr_rate")
def rerr_rate(ix: TraceIndex) -> Iterator[Violation]:
    rate = ix.meta.get("rerr_rate", 1)
    times: dict[int, list[int]] = defaultdict(list)
    for r in ix.trace.of_kind("tx"):
        if r.fields["kind"] == "RERR":
            times[r.node].append(r.time)
    for node, ts in times.items():
        for a, b in zip(ts, ts[rate:]):
            if b - a < US:
                yield Violation("rerr_rate", b, node, f"{rate + 1} RERRs within {(b - a) / US:.3f}s")


@check("packet_conservation")
def packet_conservation(ix: TraceIndex) -> Iterator[Violation]:
    flow_of = {}
    sent: Counter = Counter()
    ended: Counter = Counter()
    closed: set[int] = set()
    for r in ix.trace:
        if r.kind == "app_send":
            flow_of[r.fields["uid"]] = r.fields["flow"]
            sent[r.fields["flow"]] += 1
        elif r.kind in ("deliver", "drop"):
            uid = r.fields["uid"]
            if uid in closed:
                yield Violation("packet_conservation", r.time, r.node, f"uid {uid} accounted twice")
            closed.add(uid)
            ended[flow_of.get(uid)] += 1
    end = ix.trace.first("end")
    inflight = dict(map(tuple, end.fields["inflight"])) if end else {}
    for flow in sorted(set(sent) | set(inflight)):
        total = ended[flow] + inflight.get(flow, 0)
        if total != sent[flow]:
            yield Violation("packet_conservation", end.time if end else 0, 0,
                            f"flow {flow}: sent {sent[flow]}, delivered+dropped+in flight {total}")


@check("energy_conservation")
def energy_conservation(ix: TraceIndex) -> Iterator[Violation]:
    start, end = ix.trace.first("battery"), ix.trace.first("end")
    if start is None or end is None:
        return
    drawn = sum(r.fields.get("e", 0) for r in ix.trace.of_kind(*ENERGY_KINDS))
    initial = sum(level for _, level in start.fields["levels"])
    final = sum(level for _, level in end.fields["levels"])
    if initial - final != drawn:
        yield Violation("energy_conservation", end.time, 0,
                        f"batteries lost {initial - final} nano-mAh, trace accounts for {drawn}")


def check_trace(trace: EventTrace, only: list[str] | None = None) -> list[Violation]:
    ix = TraceIndex(trace)
    found: list[Violation] = []
    for name, fn in CHECKS.items():
        if only is None or name in only:
            found.extend(fn(ix))
    return found
