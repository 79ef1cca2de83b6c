"""Deterministic discrete-event executor.

The engine owns time, the radio and the batteries. Protocol handlers never
see any of that: they get a frame or a timer and hand back actions, which the
engine realises here. Every random draw comes from a generator seeded with
the scenario seed, so a run is a pure function of its ScenarioConfig.
"""

from __future__ import annotations

import heapq
import random

from . import node as dispatch
from .config import Failure, ScenarioConfig, dump_config, seconds_to_us
from .energy import Battery, ChargeKind, Depleted, charge, to_nano
from .state import (
    Broadcast, Deliver, Drop, Enqueue, NodeState, Note, StartTimer, Unicast,
)
from .topology import Topology, build_topology, plan_flows
from .trace import EventTrace
from .wire import BROADCAST, ControlMessage, DataPacket, MessageKind, encode_message

APP, RX, TXFAIL, TIMER, FAIL = range(5)

_TX_CHARGE = {
    MessageKind.RREQ: ChargeKind.TX_CTL, MessageKind.LOCAL_RREQ: ChargeKind.TX_CTL,
    MessageKind.RREP: ChargeKind.TX_REP, MessageKind.LOCAL_RREP: ChargeKind.TX_REP,
    MessageKind.RERR: ChargeKind.TX_REP,
}
_RX_CHARGE = {
    MessageKind.RREQ: ChargeKind.RX_CTL, MessageKind.LOCAL_RREQ: ChargeKind.RX_CTL,
    MessageKind.RREP: ChargeKind.RX_REP, MessageKind.LOCAL_RREP: ChargeKind.RX_REP,
    MessageKind.RERR: ChargeKind.RX_REP,
}


class UnknownNode(KeyError):
    pass


def auto_failure_times(config: ScenarioConfig) -> list[Failure]:
    """Spread ``auto_failures`` route-relative failures evenly over the
    traffic period."""
    n = config.auto_failures
    if n <= 0:
        return []
    span = config.sim_duration - config.flow_start - 20.0
    return [Failure(round(config.flow_start + span * (k + 1) / (n + 1), 6)) for k in range(n)]


class Simulator:
    def __init__(self, config: ScenarioConfig, topology: Topology | None = None):
        self.config = config
        self.topo = topology or build_topology(config)
        self.flows = plan_flows(config, self.topo)
        self.params = config.protocol_params()
        self.per_hop = config.mac.per_hop_us
        self.end_us = config.duration_us
        self.rng = random.Random(f"{config.seed}:mac")
        self.costs = config.energy
        self.trace = EventTrace()
        self.queue: list = []
        self.seq = 0
        self.dead: dict[int, int] = {}
        self.busy_until = {n: 0 for n in self.topo.nodes}
        self.tx_counter = 0
        self.cause: int | None = None
        self.outstanding: dict[int, int] = {}  # uid -> flow index
        self.nodes = self._make_nodes()

    # setup -------------------------------------------------------------

    def _make_nodes(self) -> dict[int, NodeState]:
        cfg = self.config
        cap = to_nano(cfg.battery_capacity)
        explicit = dict(cfg.battery_levels)
        rng = random.Random(f"{cfg.seed}:battery")
        nodes = {}
        for n in self.topo.nodes:
            draw = rng.randint(int(cap * cfg.battery_min_fraction), cap)
            remaining = to_nano(explicit[n]) if n in explicit else draw
            weak = frozenset(v for v in self.topo.neighbors[n] if self.topo.is_weak(n, v))
            nodes[n] = NodeState(n, self.topo.neighbors[n], Battery(cap, min(cap, remaining)),
                                 self.params, cfg.protocol, weak)
        return nodes

    def push(self, time: int, kind: int, *payload) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (time, self.seq, kind, payload))

    # run ---------------------------------------------------------------

    def run(self) -> EventTrace:
        cfg = self.config
        self.trace.meta = {
            "config": dump_config(cfg),
            "protocol": cfg.protocol.value,
            "per_hop_us": self.per_hop,
            "local_ttl": cfg.local_ttl,
            "local_copy_limit": cfg.local_copy_limit,
            "hop_limit": cfg.hop_limit,
            "rerr_rate": cfg.rerr_rate,
            "duration_us": self.end_us,
            "packet_size": cfg.packet_size,
            "node_count": len(self.nodes),
            "flows": [[f.src, f.dest, f.start, f.interval, c] for f, c in self.flows],
        }
        self.trace.add(0, 0, "topology", edges=[[u, v, int(self.topo.is_weak(u, v))]
                                                for u, v in self.topo.edges()])
        self.trace.add(0, 0, "battery", levels=[[n, s.battery.remaining]
                                                for n, s in sorted(self.nodes.items())])
        uid = 0
        for index, (flow, count) in enumerate(self.flows):
            start, step = seconds_to_us(flow.start), seconds_to_us(flow.interval)
            for k in range(count):
                t = start + k * step
                if t > self.end_us:
                    break
                uid += 1
                self.push(t, APP, index, uid, k)
        for failure in list(cfg.failures) + auto_failure_times(cfg):
            self.push(seconds_to_us(failure.time), FAIL, failure)

        while self.queue:
            time, _, kind, payload = heapq.heappop(self.queue)
            if time > self.end_us:
                break
            self.cause = None
            if kind == RX:
                self._on_rx(time, *payload)
            elif kind == TIMER:
                addr, tkind, key = payload
                if addr not in self.dead:
                    self._apply(addr, dispatch.on_timer(self.nodes[addr], tkind, key, time), time)
            elif kind == APP:
                self._on_app(time, *payload)
            elif kind == TXFAIL:
                self._on_txfail(time, *payload)
            elif kind == FAIL:
                self._on_fail(time, payload[0])
        self._finish()
        return self.trace

    def _finish(self) -> None:
        for addr, state in sorted(self.nodes.items()):
            if addr not in self.dead:
                self._charge_idle(addr, self.end_us, self.end_us)
        inflight: dict[int, int] = {}
        for flow in self.outstanding.values():
            inflight[flow] = inflight.get(flow, 0) + 1
        self.trace.add(self.end_us, 0, "end", inflight=sorted(inflight.items()),
                       levels=[[n, s.battery.remaining] for n, s in sorted(self.nodes.items())])

    # energy ------------------------------------------------------------

    def _draw(self, addr: int, kind: ChargeKind, now: int, amount: int = 1) -> int | None:
        """Charge ``addr``; on depletion record the remainder and kill the node."""
        battery = self.nodes[addr].battery
        before = battery.remaining
        try:
            return charge(battery, kind, self.costs, amount)
        except Depleted:
            self.trace.add(now, addr, "depleted", e=before)
            self._kill(addr, now, "depleted")
            return None

    def _charge_idle(self, addr: int, until: int, now: int) -> None:
        if self.costs.e_idle_per_s <= 0:
            return
        battery = self.nodes[addr].battery
        before = battery.remaining
        try:
            drawn = charge(battery, ChargeKind.IDLE, self.costs, until)
        except Depleted:
            drawn = before
        if drawn:
            self.trace.add(now, addr, "idle", e=drawn)

    # radio -------------------------------------------------------------

    def _contenders(self, addr: int, start: int, exclude: int) -> int:
        busy = self.busy_until
        return sum(1 for v in self.nodes[addr].neighbors
                   if v != exclude and busy[v] > start and v not in self.dead)

    def _loss(self, sender: int, receiver: int, start: int) -> float:
        mac = self.config.mac
        k = self._contenders(receiver, start, sender)
        if self.busy_until[receiver] > start:
            k += 1
        p = min(mac.loss_cap, mac.loss_per_contender * k)
        if self.topo.is_weak(sender, receiver):
            p = 1 - (1 - p) * (1 - mac.weak_link_loss)
        return p

    def _airtime(self, sender: int, start: int) -> int:
        k = self._contenders(sender, start, sender)
        return int(self.per_hop * (1 + self.config.mac.contention_factor * k))

    def _next_tx(self) -> int:
        self.tx_counter += 1
        return self.tx_counter

    def _broadcast(self, addr: int, msg: ControlMessage, now: int) -> None:
        jitter = self.rng.randint(0, int(self.per_hop * self.config.mac.jitter))
        start = max(now + jitter, self.busy_until[addr])
        duration = self._airtime(addr, start)
        e = self._draw(addr, _TX_CHARGE[msg.kind], now)
        if e is None:
            return
        self.busy_until[addr] = start + duration
        tx = self._next_tx()
        self.trace.add(now, addr, "tx", tx=tx, kind=msg.kind.name, to=BROADCAST, start=start,
                       dur=duration, att=1, ok=True, e=e, cause=self.cause,
                       hex=encode_message(msg).hex())
        arrive = start + duration
        for v in sorted(self.nodes[addr].neighbors):
            if v in self.dead:
                continue
            if self.rng.random() < self._loss(addr, v, start):
                continue
            self.push(arrive, RX, v, addr, msg, tx, start)

    def _unicast(self, addr: int, next_hop: int, frame, now: int) -> None:
        start = max(now, self.busy_until[addr])
        duration = self._airtime(addr, start)
        limit = self.config.mac.retry_limit + 1
        reachable = next_hop in self.nodes[addr].neighbors and next_hop not in self.dead
        attempts, ok = limit, False
        if reachable:
            p = self._loss(addr, next_hop, start)
            for a in range(1, limit + 1):
                if self.rng.random() >= p:
                    attempts, ok = a, True
                    break
        is_data = isinstance(frame, DataPacket)
        kind = ChargeKind.TX_DATA if is_data else _TX_CHARGE[frame.kind]
        e = self._draw(addr, kind, now, attempts)
        if e is None:
            if is_data:
                self._drop_packet(addr, frame, "SenderDepleted", now)
            return
        self.busy_until[addr] = start + attempts * duration
        tx = self._next_tx()
        fields = dict(tx=tx, to=next_hop, start=start, dur=duration, att=attempts, ok=ok,
                      e=e, cause=self.cause)
        if is_data:
            self.trace.add(now, addr, "tx", kind="DATA", uid=frame.uid, hop=frame.hop_count,
                           **fields)
        else:
            self.trace.add(now, addr, "tx", kind=frame.kind.name, hex=encode_message(frame).hex(),
                           **fields)
        end = start + attempts * duration
        if ok:
            self.push(end, RX, next_hop, addr, frame, tx, start)
        else:
            self.push(end, TXFAIL, addr, next_hop, frame, tx)

    # event handlers ----------------------------------------------------

    def _on_app(self, now: int, index: int, uid: int, seq: int) -> None:
        flow, _ = self.flows[index]
        packet = DataPacket(uid, flow.src, flow.dest, seq & 0xFFFF, now,
                            self.config.packet_size, 0, [flow.src])
        self.outstanding[uid] = index
        self.trace.add(now, flow.src, "app_send", uid=uid, flow=index, dest=flow.dest)
        if flow.src in self.dead:
            self._drop_packet(flow.src, packet, "SourceFailed", now)
            return
        self._apply(flow.src, dispatch.handle_data(self.nodes[flow.src], packet, now), now)

    def _on_rx(self, now: int, addr: int, sender: int, frame, tx: int, start: int) -> None:
        is_data = isinstance(frame, DataPacket)
        died = self.dead.get(sender)
        if died is not None and died <= start:
            if is_data:
                self._drop_packet(sender, frame, "SenderFailed", now)
            return
        if addr in self.dead:
            if is_data:
                # no acknowledgement: the sender learns of the break now
                self.cause = tx
                if sender in self.dead:
                    self._drop_packet(sender, frame, "SenderFailed", now)
                else:
                    self._on_txfail(now, sender, addr, frame, tx)
            return
        kind = ChargeKind.RX_DATA if is_data else _RX_CHARGE[frame.kind]
        e = self._draw(addr, kind, now)
        if e is None:
            if is_data:
                self._drop_packet(addr, frame, "ReceiverDepleted", now)
            return
        if is_data:
            frame.hop_count += 1
            frame.path.append(addr)
            self.trace.add(now, addr, "rx", tx=tx, kind="DATA", sender=sender, uid=frame.uid, e=e)
        else:
            self.trace.add(now, addr, "rx", tx=tx, kind=frame.kind.name, sender=sender, e=e)
        self.cause = tx
        self._apply(addr, dispatch.handle_frame(self.nodes[addr], frame, sender, now), now)

    def _on_txfail(self, now: int, addr: int, next_hop: int, frame, tx: int) -> None:
        if addr in self.dead:
            if isinstance(frame, DataPacket):
                self._drop_packet(addr, frame, "SenderFailed", now)
            return
        self.cause = tx
        is_data = isinstance(frame, DataPacket)
        self.trace.add(now, addr, "link_break", next_hop=next_hop, tx=tx,
                       kind="DATA" if is_data else frame.kind.name)
        self._apply(addr, dispatch.on_link_break(self.nodes[addr], next_hop, frame, now), now)

    def _on_fail(self, now: int, failure: Failure) -> None:
        addr = failure.node
        if addr is None:
            addr = self._pick_relay(now, failure.position)
            if addr is None:
                self.trace.add(now, 0, "fail_skipped", position=failure.position)
                return
        self.inject_node_failure(addr, now)

    def inject_node_failure(self, addr: int, now: int) -> None:
        if addr not in self.nodes:
            raise UnknownNode(addr)
        if addr not in self.dead:
            self._kill(addr, now, "scheduled")

    def _kill(self, addr: int, now: int, cause: str) -> None:
        self.dead[addr] = now
        self._charge_idle(addr, now, now)
        held = dispatch.fail(self.nodes[addr])
        self.trace.add(now, addr, "fail", cause=cause, held=len(held))
        for packet in held:
            self._drop_packet(addr, packet, "NodeFailed", now)

    # route-relative failure choice ---------------------------------------

    def current_route(self, src: int, dest: int, now: int) -> list[int] | None:
        path = [src]
        at = src
        while at != dest:
            entry = self.nodes[at].routes.get(dest)
            if entry is None or not entry.valid or entry.lifetime_expiry < now:
                return None
            at = entry.next_hop
            if at in path or at in self.dead or len(path) > self.params.hop_limit:
                return None
            path.append(at)
        return path

    def _keeps_flows_connected(self, victim: int) -> bool:
        dead = set(self.dead) | {victim}
        for flow, _ in self.flows:
            if flow.src in dead or flow.dest in dead:
                continue
            before = self.topo.hop_distances(flow.src, set(self.dead))
            if flow.dest in before and flow.dest not in self.topo.hop_distances(flow.src, dead):
                return False
        return True

    def _pick_relay(self, now: int, position: str) -> int | None:
        """A relay on some live flow route whose loss partitions no flow, so
        the failure exercises repair rather than plain unreachability."""
        endpoints = {a for f, _ in self.flows for a in (f.src, f.dest)}
        n = len(self.flows)
        offset = sum(1 for r in self.trace.of_kind("fail", "fail_skipped"))
        for i in range(n):
            flow, _ = self.flows[(offset + i) % n]
            route = self.current_route(flow.src, flow.dest, now)
            if route is None:
                continue
            relays = [a for a in route[1:-1] if a not in endpoints]
            if position == "first":
                relays = [a for a in relays if a == route[1]]
            else:
                mid = (len(relays) - 1) // 2
                order = sorted(range(len(relays)), key=lambda j: (abs(j - mid), j))
                relays = [relays[j] for j in order]
            for victim in relays:
                if self._keeps_flows_connected(victim):
                    return victim
        return None

    # actions -----------------------------------------------------------

    def _drop_packet(self, addr: int, packet: DataPacket, reason: str, now: int) -> None:
        if self.outstanding.pop(packet.uid, None) is not None:
            self.trace.add(now, addr, "drop", reason=reason, uid=packet.uid)

    def _apply(self, addr: int, actions, now: int) -> None:
        for action in actions:
            if addr in self.dead:
                # the node died mid-way (battery): whatever it still held is lost
                frame = action.msg if isinstance(action, Unicast) else getattr(action, "packet", None)
                if isinstance(frame, DataPacket):
                    self._drop_packet(addr, frame, "NodeFailed", now)
                continue
            if isinstance(action, Broadcast):
                self._broadcast(addr, action.msg, now)
            elif isinstance(action, Unicast):
                self._unicast(addr, action.next_hop, action.msg, now)
            elif isinstance(action, Deliver):
                packet = action.packet
                if self.outstanding.pop(packet.uid, None) is not None:
                    self.trace.add(now, addr, "deliver", uid=packet.uid, delay=now - packet.created_us,
                                   path=list(packet.path))
            elif isinstance(action, StartTimer):
                self.push(now + action.duration, TIMER, addr, action.kind, action.key)
            elif isinstance(action, Drop):
                if action.packet is not None:
                    self._drop_packet(addr, action.packet, action.reason, now)
                else:
                    fields = {"reason": action.reason}
                    if action.msg is not None:
                        fields["kind"] = action.msg.kind.name
                    self.trace.add(now, addr, "ctl_drop", **fields)
            elif isinstance(action, Note):
                self.trace.add(now, addr, "note", event=action.event, **action.fields)
            elif isinstance(action, Enqueue):
                self.trace.add(now, addr, "enqueue", uid=action.packet.uid)


def run(config: ScenarioConfig) -> EventTrace:
    return Simulator(config).run()

