"""LOAD local repair: the node that detects the break floods a fresh RREQ
for the final destination under its own address and waits for the
destination's RREP. On timeout it reports a RERR to the data originator,
subject to the per-second RERR limit, and discards what it buffered."""

from __future__ import annotations

from .routing import _broadcast_rreq, forward_data, route_lookup
from .state import Action, Drop, LoadRepairSession, NodeState, Note, Unicast
from .wire import DataPacket, ErrorCode, RerrPayload


def start_load_repair(node: NodeState, packet: DataPacket, now: int) -> list[Action]:
    session = node.load_repairs.get(packet.dest)
    if session is not None:
        session.buffered.append(packet)
        return []
    session = LoadRepairSession(node.next_token(), node.address, packet.dest, packet.src,
                                buffered=[packet])
    node.load_repairs[packet.dest] = session
    return load_local_repair(node, session, now)


def load_local_repair(node: NodeState, session: LoadRepairSession, now: int) -> list[Action]:
    session.deadline = now + node.params.load_deadline
    actions = _broadcast_rreq(node, session.final_dest, now, session.session_id,
                              timer="load_repair", destination_only=True)
    session.rreq_id = actions[0].msg.rreq_id
    note = Note("repair_start", {"protocol": "load", "dest": session.final_dest,
                                 "session": session.session_id, "rreq_id": session.rreq_id})
    return [note] + actions


def load_route_found(node: NodeState, dest: int, now: int) -> list[Action]:
    session = node.load_repairs.get(dest)
    if session is None or route_lookup(node, dest, now) is None:
        return []
    del node.load_repairs[dest]
    actions: list[Action] = [Note("repair_end", {"protocol": "load", "dest": dest, "success": True,
                                                 "session": session.session_id})]
    for packet in session.buffered:
        actions += forward_data(node, packet, now)
    return actions


def load_handle_repair_failure(node: NodeState, session: LoadRepairSession,
                               now: int) -> list[Action]:
    node.load_repairs.pop(session.final_dest, None)
    node.repair_failed_at[session.final_dest] = now
    actions: list[Action] = [Note("repair_end", {"protocol": "load", "dest": session.final_dest,
                                                 "success": False, "session": session.session_id})]
    originators = []
    for packet in session.buffered:
        actions.append(Drop("RepairFailed", packet=packet))
        if packet.src != node.address and packet.src not in originators:
            originators.append(packet.src)
    for origin in originators:
        route = route_lookup(node, origin, now)
        if route is None:
            actions.append(Drop("NoRouteForRerr"))
        elif node.rerr_budget.allow(now):
            msg = RerrPayload(ErrorCode.REPAIR_FAILED, session.final_dest, origin).to_message()
            actions.append(Unicast(route.next_hop, msg))
        else:
            actions.append(Drop("RerrRateLimit"))
    return actions


def load_repair_timeout(node: NodeState, dest: int, session_id: int, now: int) -> list[Action]:
    session = node.load_repairs.get(dest)
    if session is None or session.session_id != session_id:
        return []
    if route_lookup(node, dest, now) is not None:
        return load_route_found(node, dest, now)
    return load_handle_repair_failure(node, session, now)
