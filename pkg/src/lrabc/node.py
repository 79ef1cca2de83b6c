"""Frame, timer and link-break dispatch for a single node."""

from __future__ import annotations

from . import load, repair, routing
from .state import Action, Drop, NodeState, Protocol
from .wire import ControlMessage, DataPacket, ErrorCode, MessageKind


def handle_frame(node: NodeState, frame: ControlMessage | DataPacket, sender: int,
                 now: int) -> list[Action]:
    if isinstance(frame, DataPacket):
        if frame.src != node.address:
            # relays learn the way back to the source, so a RERR can reach it
            routing.install_route(node, frame.src, sender, frame.hop_count, now)
        return handle_data(node, frame, now)
    kind = frame.kind
    if kind is MessageKind.RREQ:
        return routing.handle_rreq(node, frame, sender, now)
    if kind is MessageKind.RREP:
        actions = routing.handle_rrep(node, frame, sender, now)
        if frame.originator == node.address and frame.dest in node.load_repairs:
            actions += load.load_route_found(node, frame.dest, now)
        return actions
    if kind is MessageKind.RERR:
        return routing.handle_rerr(node, frame, sender, now)
    if node.protocol is not Protocol.LRABC:
        return [Drop("Unsupported", msg=frame)]
    if kind is MessageKind.LOCAL_RREQ:
        return repair.scout_handle_local_rreq(node, frame, sender, now)
    if kind is MessageKind.LOCAL_RREP:
        return repair.onlooker_handle_local_rrep(node, frame, sender, now)
    return [Drop("Unsupported", msg=frame)]


def handle_data(node: NodeState, packet: DataPacket, now: int) -> list[Action]:
    """Data that was just generated here or received from a neighbour."""
    if packet.dest == node.address or routing.route_lookup(node, packet.dest, now):
        return routing.forward_data(node, packet, now)
    if node.protocol is Protocol.LRABC:
        if repair.buffer_if_repairing(node, packet):
            return []
        if packet.src == node.address:
            return routing.originate_route_discovery(node, packet.dest, now, packet)
        entry = node.routes.get(packet.dest)
        horizon = node.params.repair_window * node.params.trial_limit
        if entry is not None and not _recently_failed(node, packet.dest, now, horizon):
            # the route broke under another flow: bypass its next hop locally
            return repair.detect_link_break(node, entry.next_hop, packet, now)[1]
        return [Drop("NoRoute", packet=packet)] + routing.send_rerr(
            node, ErrorCode.NO_ROUTE, packet.dest, packet.src, now)

    session = node.load_repairs.get(packet.dest)
    if session is not None:
        session.buffered.append(packet)
        return []
    if packet.src == node.address:
        return routing.originate_route_discovery(node, packet.dest, now, packet)
    entry = node.routes.get(packet.dest)
    if entry is not None and not _recently_failed(node, packet.dest, now, node.params.load_deadline):
        # route existed but broke or expired: LOAD repairs on behalf of the originator
        return load.start_load_repair(node, packet, now)
    return [Drop("NoRoute", packet=packet)] + routing.send_rerr(
        node, ErrorCode.NO_ROUTE, packet.dest, packet.src, now)


def _recently_failed(node: NodeState, dest: int, now: int, horizon: int) -> bool:
    failed_at = node.repair_failed_at.get(dest)
    return failed_at is not None and now - failed_at < horizon


def on_link_break(node: NodeState, next_hop: int, frame: ControlMessage | DataPacket,
                  now: int) -> list[Action]:
    """Unicast to ``next_hop`` exhausted its MAC retries."""
    # invalidate first: a source that cannot repair locally falls back to a
    # fresh discovery, which is a no-op while the broken route still looks valid
    routing.invalidate_via(node, next_hop)
    if isinstance(frame, DataPacket):
        if node.protocol is Protocol.LRABC:
            return repair.detect_link_break(node, next_hop, frame, now)[1]
        return load.start_load_repair(node, frame, now)
    return [Drop("LinkBreak", msg=frame)]


def on_timer(node: NodeState, kind: str, key, now: int) -> list[Action]:
    if kind == "discovery":
        return routing.discovery_timeout(node, key[0], key[1], now)
    if kind == "repair":
        return repair.repair_timeout(node, key[0], key[1], key[2], now)
    if kind == "snh_window":
        return repair.snh_window_close(node, key, now)
    if kind == "load_repair":
        return load.load_repair_timeout(node, key[0], key[1], now)
    raise ValueError(f"unknown timer {kind!r}")


def held_packets(node: NodeState) -> list[DataPacket]:
    held: list[DataPacket] = []
    for pending in node.pending.values():
        held.extend(pending.queue)
    for session in node.repairs.values():
        held.extend(session.buffered)
    for session in node.load_repairs.values():
        held.extend(session.buffered)
    return held


def fail(node: NodeState) -> list[DataPacket]:
    """Mark the node dead and hand back everything it was holding."""
    held = held_packets(node)
    node.failed = True
    node.pending.clear()
    node.repairs.clear()
    node.load_repairs.clear()
    return held
