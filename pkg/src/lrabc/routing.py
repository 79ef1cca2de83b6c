"""Route discovery shared by both protocols.

Handlers are pure transitions: they mutate the given NodeState and return the
actions the engine must carry out. ``sender`` is always the link-layer
address the frame arrived from.
"""

from __future__ import annotations

from dataclasses import replace

from .state import (
    Action, Broadcast, Deliver, Discovery, Drop, Enqueue, NodeState, Note,
    RouteRequestRecord, RoutingEntry, StartTimer, Unicast,
)
from .wire import (
    NO_ADDRESS, ControlMessage, DataPacket, ErrorCode, MessageKind, RerrPayload,
)


def compute_ael_update(ael_in: int, hops_in: int, el_node: int) -> int:
    """Fold one node's energy level into a running mean of ``hops_in`` values.

    All quantities are AEL fixed-point integers; the result is rounded to the
    nearest unit, halves up.
    """
    if el_node < 0:
        raise ValueError("energy level must be non-negative")
    num = ael_in * hops_in + el_node
    den = hops_in + 1
    return (2 * num + den) // (2 * den)


def route_lookup(node: NodeState, dest: int, now: int) -> RoutingEntry | None:
    if dest == node.address:
        return RoutingEntry(dest, dest, 0, now + node.params.route_lifetime_us)
    entry = node.routes.get(dest)
    if entry is None or not entry.valid:
        return None
    if entry.lifetime_expiry < now:
        entry.valid = False
        return None
    return entry


def install_route(node: NodeState, dest: int, next_hop: int, hop_count: int, now: int, *,
                  second_next_hop: int = NO_ADDRESS, weak_links: int = 0,
                  force: bool = False) -> RoutingEntry:
    """Insert or refresh a route; an existing valid route is only replaced by
    a shorter one, the same next hop, or when ``force`` is set."""
    expiry = now + node.params.route_lifetime_us
    entry = route_lookup(node, dest, now)
    if entry is not None and not force and next_hop != entry.next_hop:
        if hop_count >= entry.hop_count:
            return entry
    if entry is None:
        old = node.routes.get(dest)
        entry = RoutingEntry(dest, next_hop, hop_count, expiry, route_cost=hop_count,
                             weak_links=weak_links, second_next_hop=second_next_hop,
                             precursors=list(old.precursors) if old else [])
        node.routes[dest] = entry
        return entry
    entry.next_hop = next_hop
    entry.hop_count = hop_count
    entry.route_cost = hop_count
    entry.weak_links = weak_links
    entry.second_next_hop = second_next_hop
    entry.lifetime_expiry = expiry
    entry.valid = True
    return entry


def invalidate_via(node: NodeState, next_hop: int) -> list[int]:
    lost = []
    for dest, entry in node.routes.items():
        if entry.valid and entry.next_hop == next_hop:
            entry.valid = False
            lost.append(dest)
    return lost


def _purge_records(node: NodeState, now: int) -> None:
    horizon = now - node.params.record_lifetime
    stale = [k for k, r in node.rreq_seen.items() if r.first_seen < horizon]
    for k in stale:
        del node.rreq_seen[k]


def originate_route_discovery(node: NodeState, dest: int, now: int,
                              packet: DataPacket | None = None) -> list[Action]:
    if route_lookup(node, dest, now) is not None:
        return []
    actions: list[Action] = []
    pending = node.pending.get(dest)
    if pending is not None:
        if packet is not None:
            pending.queue.append(packet)
            actions.append(Enqueue(packet))
        return actions
    pending = Discovery(dest, node.next_token())
    node.pending[dest] = pending
    if packet is not None:
        pending.queue.append(packet)
        actions.append(Enqueue(packet))
    actions += _broadcast_rreq(node, dest, now, pending.token)
    return actions


def _broadcast_rreq(node: NodeState, dest: int, now: int, token: int,
                    timer: str = "discovery", destination_only: bool = False) -> list[Action]:
    _purge_records(node, now)
    rreq_id = node.next_rreq_id()
    node.rreq_seen[(node.address, rreq_id)] = RouteRequestRecord(
        node.address, rreq_id, now, (0, 0), node.el)
    msg = ControlMessage(MessageKind.RREQ, dest=dest, originator=node.address,
                         flag_d=destination_only, ael=node.el, rreq_id=rreq_id)
    timeout = node.params.discovery_timeout if timer == "discovery" else node.params.load_deadline
    return [Broadcast(msg), StartTimer(timer, timeout, (dest, token))]


def discovery_timeout(node: NodeState, dest: int, token: int, now: int) -> list[Action]:
    pending = node.pending.get(dest)
    if pending is None or pending.token != token:
        return []
    if route_lookup(node, dest, now) is not None:
        del node.pending[dest]
        return flush_pending(node, dest, now)
    if pending.retries < node.params.discovery_retries:
        pending.retries += 1
        pending.token = node.next_token()
        return _broadcast_rreq(node, dest, now, pending.token)
    del node.pending[dest]
    return [Drop("NoRoute", packet=p) for p in pending.queue]


def flush_pending(node: NodeState, dest: int, now: int) -> list[Action]:
    pending = node.pending.pop(dest, None)
    actions: list[Action] = []
    if pending is not None:
        for packet in pending.queue:
            actions += forward_data(node, packet, now)
    return actions


def handle_rreq(node: NodeState, msg: ControlMessage, sender: int, now: int) -> list[Action]:
    if msg.originator == node.address:
        return [Drop("Duplicate", msg=msg)]
    hops = msg.hop_count + 1
    wl = msg.weak_links + node.is_weak(sender)
    ael = compute_ael_update(msg.ael, hops, node.el)
    key = (msg.originator, msg.rreq_id)
    cost = (hops, wl)
    record = node.rreq_seen.get(key)
    if record is not None and now - record.first_seen > node.params.record_lifetime:
        record = None
    if record is not None:
        better = cost < record.best_cost_seen or (
            cost == record.best_cost_seen and ael > record.best_ael_seen)
        if not better:
            return [Drop("Duplicate", msg=msg)]
        record.best_cost_seen = cost
        record.best_ael_seen = ael
    else:
        _purge_records(node, now)
        node.rreq_seen[key] = RouteRequestRecord(msg.originator, msg.rreq_id, now, cost, ael)

    install_route(node, msg.originator, sender, hops, now, weak_links=wl, force=True)

    if msg.dest == node.address:
        reply = ControlMessage(MessageKind.RREP, dest=node.address, originator=msg.originator,
                               ael=node.el, rreq_id=msg.rreq_id, rrep_id=node.next_rrep_id())
        return [Unicast(sender, reply)]
    known = route_lookup(node, msg.dest, now)
    if known is not None and not msg.flag_d and known.next_hop != sender \
            and known.hop_count <= node.params.hop_limit:
        reply = ControlMessage(MessageKind.RREP, dest=msg.dest, originator=msg.originator,
                               hop_count=min(known.hop_count, 31), ael=node.el,
                               rreq_id=msg.rreq_id, rrep_id=node.next_rrep_id(),
                               second_next_hop=known.next_hop)
        known.add_precursor(sender)
        return [Unicast(sender, reply)]
    if hops > node.params.hop_limit:
        return [Drop("HopLimit", msg=msg)]
    return [Broadcast(replace(msg, hop_count=hops, ael=ael, weak_links=wl))]


def handle_rrep(node: NodeState, msg: ControlMessage, sender: int, now: int) -> list[Action]:
    is_origin = msg.originator == node.address
    reverse = None if is_origin else route_lookup(node, msg.originator, now)
    if not is_origin and reverse is None:
        return [Drop("NoReverseRoute", msg=msg)]
    hops = msg.hop_count + 1
    wl = min(msg.weak_links + node.is_weak(sender), hops)
    ael = compute_ael_update(msg.ael, hops, node.el)
    # the reply describes the path the originator will use, so it always wins
    forward = install_route(node, msg.dest, sender, hops, now,
                            second_next_hop=msg.second_next_hop, weak_links=wl, force=True)
    if is_origin:
        return flush_pending(node, msg.dest, now)
    if hops > node.params.hop_limit:
        return [Drop("HopLimit", msg=msg)]
    forward.add_precursor(reverse.next_hop)
    out = replace(msg, hop_count=hops, ael=ael, weak_links=wl,
                  second_next_hop=forward.next_hop)
    return [Unicast(reverse.next_hop, out)]


def send_rerr(node: NodeState, code: ErrorCode, failed_dest: int, data_originator: int,
              now: int) -> list[Action]:
    if data_originator == node.address:
        return []
    route = route_lookup(node, data_originator, now)
    if route is None:
        return [Drop("NoRouteForRerr")]
    if not node.rerr_budget.allow(now):
        return [Drop("RerrRateLimit")]
    msg = RerrPayload(code, failed_dest, data_originator).to_message()
    return [Unicast(route.next_hop, msg)]


def handle_rerr(node: NodeState, msg: ControlMessage, sender: int, now: int) -> list[Action]:
    payload = RerrPayload.from_message(msg)
    entry = node.routes.get(payload.failed_dest)
    if entry is not None and entry.valid and entry.next_hop == sender:
        entry.valid = False
    if payload.originator_of_data == node.address:
        if entry is not None:
            entry.valid = False
        return [Note("rerr_received", {"code": payload.error_code.name,
                                       "failed_dest": payload.failed_dest})]
    route = route_lookup(node, payload.originator_of_data, now)
    if route is None or msg.hop_count + 1 > node.params.hop_limit:
        return [Drop("NoRouteForRerr", msg=msg)]
    if not node.rerr_budget.allow(now):
        return [Drop("RerrRateLimit", msg=msg)]
    return [Unicast(route.next_hop, replace(msg, hop_count=msg.hop_count + 1))]


def forward_data(node: NodeState, packet: DataPacket, now: int) -> list[Action]:
    """Deliver, forward on a known route, or hand to the no-route policy."""
    if packet.dest == node.address:
        return [Deliver(packet)]
    route = route_lookup(node, packet.dest, now)
    if route is not None and packet.hop_count >= node.params.hop_limit:
        return [Drop("HopLimit", packet=packet)]
    if route is not None:
        route.lifetime_expiry = now + node.params.route_lifetime_us
        back = node.routes.get(packet.src)
        if back is not None and back.valid and back.lifetime_expiry >= now:
            back.lifetime_expiry = route.lifetime_expiry
        return [Unicast(route.next_hop, packet)]
    if packet.src == node.address:
        return originate_route_discovery(node, packet.dest, now, packet)
    return [Drop("NoRoute", packet=packet)]
