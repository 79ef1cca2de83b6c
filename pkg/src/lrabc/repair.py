"""LR-ABC local link repair.

The upstream node that loses its next hop becomes the first scout: it
broadcasts a Local_RREQ aimed at the second next hop (the node just past the
abandoned one). Intermediate nodes relay every loop-free copy within
``local_ttl`` hops, appending themselves to the path record. The second next
hop answers each copy with a Local_RREP that retraces the record; every node
on the way folds its own energy level into the reply, keeps the best reply per
return path (onlooker comparison) and drops the rest. When the repair window
closes the upstream node switches to the best local link it has seen.
"""

from __future__ import annotations

from dataclasses import replace

from .routing import (
    compute_ael_update, forward_data, install_route, originate_route_discovery, route_lookup,
    send_rerr,
)
from .state import (
    Action, BeePhase, Broadcast, CandidateLink, Drop, NodeState, Note, RepairSession,
    ScoutRecord, SnhWindow, StartTimer, Unicast,
)
from .wire import NO_ADDRESS, ControlMessage, DataPacket, ErrorCode, MessageKind


class NoSecondNextHop(Exception):
    """The abandoned node was the final destination; there is nothing to bypass."""


def compare_local_links(a: CandidateLink, b: CandidateLink) -> int:
    """Positive when ``a`` is the better link, negative when ``b`` is, 0 if equal.

    Higher mean energy first, then fewer hops, fewer weak links, and the
    lower next-hop address.
    """
    ka = (a.ael, -a.hop_count, -a.weak_links, -a.next_hop_toward_snh)
    kb = (b.ael, -b.hop_count, -b.weak_links, -b.next_hop_toward_snh)
    return (ka > kb) - (ka < kb)


def _phase_note(node: NodeState, key, old: BeePhase, new: BeePhase, cause: str) -> Note:
    return Note("phase", {"upstream": key[0], "rreq_id": key[1], "from": old.value,
                          "to": new.value, "cause": cause})


def second_next_hop_for(node: NodeState, dest: int, failed_next_hop: int) -> int:
    if dest == failed_next_hop:
        raise NoSecondNextHop(f"{failed_next_hop} is the destination")
    entry = node.routes.get(dest)
    if entry is None or entry.next_hop != failed_next_hop or entry.second_next_hop in (
            NO_ADDRESS, failed_next_hop, node.address):
        raise NoSecondNextHop(f"no recorded hop after {failed_next_hop}")
    return entry.second_next_hop


def detect_link_break(node: NodeState, failed_next_hop: int, packet: DataPacket,
                      now: int) -> tuple[RepairSession | None, list[Action]]:
    dest = packet.dest
    session = node.repairs.get(dest)
    if session is not None:
        session.buffered.append(packet)
        return session, []
    try:
        snh = second_next_hop_for(node, dest, failed_next_hop)
    except NoSecondNextHop:
        code = ErrorCode.NODE_UNREACHABLE if dest == failed_next_hop else ErrorCode.NO_ROUTE
        if code is ErrorCode.NO_ROUTE and packet.src == node.address:
            return None, originate_route_discovery(node, dest, now, packet)
        actions: list[Action] = [Drop("NoSecondNextHop", packet=packet)]
        actions += send_rerr(node, code, dest, packet.src, now)
        return None, actions
    session = RepairSession(
        session_id=node.next_token(), upstream=node.address, abandoned=failed_next_hop,
        second_next_hop=snh, final_dest=dest, data_originator=packet.src,
        buffered=[packet],
    )
    node.repairs[dest] = session
    actions = [Note("repair_start", {"protocol": "lrabc", "dest": dest, "abandoned": failed_next_hop,
                                     "snh": snh, "session": session.session_id})]
    return session, actions + initiate_local_rreq(session, node, now)


def initiate_local_rreq(session: RepairSession, node: NodeState, now: int) -> list[Action]:
    if session.phase is not BeePhase.IDLE:
        raise ValueError("a trial can only start from the idle phase")
    rreq_id = node.next_rreq_id()
    session.rreq_id = rreq_id
    session.trial_ids.append(rreq_id)
    session.trials_used += 1
    session.deadline = now + node.params.repair_window
    key = (node.address, rreq_id)
    node.scout[key] = ScoutRecord(now, BeePhase.SCOUT)
    msg = ControlMessage(
        MessageKind.LOCAL_RREQ, dest=session.final_dest, originator=node.address,
        ael=node.el, rreq_id=rreq_id, second_next_hop=session.second_next_hop,
        path=(node.address,),
    )
    note = _phase_note(node, key, session.phase, BeePhase.SCOUT, "broadcast")
    session.phase = BeePhase.SCOUT
    return [note, Broadcast(msg),
            StartTimer("repair", node.params.repair_window, (session.final_dest, session.session_id, rreq_id))]


def _purge_scout(node: NodeState, now: int) -> None:
    horizon = now - node.params.record_lifetime
    for key in [k for k, r in node.scout.items() if r.first_seen < horizon]:
        del node.scout[key]
    for key in [k for k, w in node.snh_windows.items() if w.opened < horizon]:
        del node.snh_windows[key]


def scout_handle_local_rreq(node: NodeState, msg: ControlMessage, sender: int,
                            now: int) -> list[Action]:
    if msg.originator == node.address or node.address in msg.path:
        return [Drop("Duplicate", msg=msg)]
    key = (msg.originator, msg.rreq_id)
    record = node.scout.get(key)
    if record is None:
        _purge_scout(node, now)
        record = node.scout[key] = ScoutRecord(now)
    if msg.path in record.paths:
        return [Drop("Duplicate", msg=msg)]
    record.paths.add(msg.path)
    if node.address == msg.second_next_hop:
        return snh_handle_local_rreq(node, msg, sender, now)
    hops = msg.hop_count + 1
    if hops > node.params.local_ttl:
        return [Drop("LocalTtl", msg=msg)]
    if hops == node.params.local_ttl and msg.second_next_hop not in node.neighbors:
        # every receiver would be past the TTL unless it is the target itself
        return [Drop("LocalTtl", msg=msg)]
    limit = node.params.local_copy_limit
    if limit is not None and record.relayed >= limit:
        return [Drop("CopyLimit", msg=msg)]
    record.relayed += 1
    actions: list[Action] = []
    if record.phase is not BeePhase.SCOUT:
        actions.append(_phase_note(node, key, record.phase, BeePhase.SCOUT, "local_rreq"))
        record.phase = BeePhase.SCOUT
    out = replace(
        msg, hop_count=hops,
        ael=compute_ael_update(msg.ael, hops, node.el),
        weak_links=msg.weak_links + node.is_weak(sender),
        path=msg.path + (node.address,),
    )
    actions.append(Broadcast(out))
    return actions


def snh_handle_local_rreq(node: NodeState, msg: ControlMessage, sender: int,
                          now: int) -> list[Action]:
    key = (msg.originator, msg.rreq_id)
    window = node.snh_windows.get(key)
    if window is None:
        window = node.snh_windows[key] = SnhWindow(now)
        window.copies.append((sender, msg))
        return [StartTimer("snh_window", node.params.snh_window, key)]
    if window.closed:
        return [Drop("WindowClosed", msg=msg)]
    window.copies.append((sender, msg))
    return []


def snh_window_close(node: NodeState, key: tuple[int, int], now: int) -> list[Action]:
    """Answer every buffered copy. The reply record is the request record
    followed by this node and, when known, its own next hop toward the final
    destination, so relays on the new link learn their second next hop."""
    window = node.snh_windows.get(key)
    if window is None or window.closed:
        return []
    window.closed = True
    actions: list[Action] = []
    for sender, msg in window.copies:
        tail: tuple[int, ...] = (node.address,)
        onward = route_lookup(node, msg.dest, now) if msg.dest != node.address else None
        if onward is not None and onward.next_hop not in msg.path:
            tail += (onward.next_hop,)
        reply = ControlMessage(
            MessageKind.LOCAL_RREP, dest=msg.dest, originator=msg.originator,
            ael=node.el, rreq_id=msg.rreq_id, rrep_id=node.next_rrep_id(),
            second_next_hop=node.address, path=msg.path + tail,
        )
        actions.append(Unicast(sender, reply))
    return actions


def _split_reply_path(msg: ControlMessage) -> int:
    """Index of the second next hop in a Local_RREP record; entries before it
    are the request record."""
    try:
        return msg.path.index(msg.second_next_hop)
    except ValueError:
        return -1


def onlooker_handle_local_rrep(node: NodeState, msg: ControlMessage, sender: int,
                               now: int) -> list[Action]:
    path = msg.path
    j = _split_reply_path(msg)
    if j < 1 or node.address not in path[:j]:
        return [Drop("NoSession", msg=msg)]
    i = path.index(node.address)
    if sender != path[i + 1]:
        return [Drop("NoSession", msg=msg)]
    key = (msg.originator, msg.rreq_id)
    hops = msg.hop_count + 1
    ael = compute_ael_update(msg.ael, hops, node.el)
    wl = msg.weak_links + node.is_weak(sender)
    cand = CandidateLink(sender, hops, ael, wl, msg.rrep_id)

    if i == 0:
        return _anchor_onlooker(node, msg, cand, key, j, now)

    record = node.scout.get(key)
    if record is None or record.phase is BeePhase.IDLE:
        return [Drop("NoSession", msg=msg)]
    actions: list[Action] = []
    if record.phase is BeePhase.SCOUT:
        actions.append(_phase_note(node, key, record.phase, BeePhase.EMPLOYED, "local_rrep"))
        record.phase = BeePhase.EMPLOYED
    # replies sharing the request prefix and length differ only downstream of
    # here; drop one only if a forwarded reply is at least as good on both
    # energy and weak links, since later folds can round different AELs equal
    forwarded = record.best.setdefault((path[:i], j), [])
    if any(f.ael >= cand.ael and f.weak_links <= cand.weak_links for f in forwarded):
        return actions + [Drop("WorseCandidate", msg=msg)]
    forwarded.append(cand)

    after = path[i + 2] if i + 2 < len(path) else NO_ADDRESS
    if record.installed_hops is None or hops < record.installed_hops:
        record.installed_hops = hops
        install_route(node, msg.dest, sender, hops + 1, now, second_next_hop=after,
                      weak_links=wl, force=True)
    install_route(node, msg.second_next_hop, sender, hops, now, weak_links=wl,
                  second_next_hop=after if i + 2 <= j else NO_ADDRESS)
    out = replace(msg, hop_count=hops, ael=ael, weak_links=wl)
    return actions + [Unicast(path[i - 1], out)]


def _anchor_onlooker(node: NodeState, msg: ControlMessage, cand: CandidateLink, key,
                     j: int, now: int) -> list[Action]:
    session = node.repairs.get(msg.dest)
    if session is None or session.phase is BeePhase.IDLE:
        return [Drop("NoSession", msg=msg)]
    record = node.scout.get(key)
    if record is None or key[1] not in session.trial_ids:
        # replies to an earlier trial of this session still describe a usable link
        return [Drop("NoSession", msg=msg)]
    if session.abandoned in msg.path[:j]:
        # after a false break the abandoned node is still alive and may relay
        return [Drop("ThroughAbandoned", msg=msg)]
    actions: list[Action] = []
    if session.phase is BeePhase.SCOUT:
        # the anchor's phase belongs to its current trial, whichever trial the reply answers
        current = (node.address, session.rreq_id)
        actions.append(_phase_note(node, current, session.phase, BeePhase.EMPLOYED, "local_rrep"))
        session.phase = BeePhase.EMPLOYED
        node.scout.get(current, record).phase = BeePhase.EMPLOYED
    session.candidates += 1
    if session.best_link is not None and compare_local_links(cand, session.best_link) <= 0:
        return actions + [Drop("WorseCandidate", msg=msg)]
    session.best_link = cand
    session.best_path = msg.path
    actions.append(Note("best_link", {"session": session.session_id, "ael": cand.ael,
                                      "hops": cand.hop_count, "wl": cand.weak_links,
                                      "next_hop": cand.next_hop_toward_snh,
                                      "path": list(msg.path[:j + 1])}))
    return actions


def finalize_repair(session: RepairSession, node: NodeState, now: int) -> list[Action]:
    dest = session.final_dest
    key = (node.address, session.rreq_id)
    if session.best_link is not None:
        link = session.best_link
        path = session.best_path
        after = path[2] if len(path) > 2 else NO_ADDRESS
        install_route(node, dest, link.next_hop_toward_snh, link.hop_count + 1, now,
                      second_next_hop=after, weak_links=link.weak_links, force=True)
        snh_at = path.index(session.second_next_hop)
        install_route(node, session.second_next_hop, link.next_hop_toward_snh, link.hop_count,
                      now, second_next_hop=after if snh_at >= 2 else NO_ADDRESS, force=True)
        path = path[:snh_at + 1]
        del node.repairs[dest]
        actions: list[Action] = [
            _phase_note(node, key, session.phase, BeePhase.IDLE, "repaired"),
            Note("repair_end", {"protocol": "lrabc", "dest": dest, "success": True,
                                "session": session.session_id, "abandoned": session.abandoned,
                                "path": list(path), "trials": session.trials_used,
                                "candidates": session.candidates}),
        ]
        session.phase = BeePhase.IDLE
        for packet in session.buffered:
            actions += forward_data(node, packet, now)
        return actions
    if session.trials_used < node.params.trial_limit:
        note = _phase_note(node, key, session.phase, BeePhase.IDLE, "retry")
        session.phase = BeePhase.IDLE
        return [note] + initiate_local_rreq(session, node, now)
    return repair_failed(session, node, now)


def repair_failed(session: RepairSession, node: NodeState, now: int) -> list[Action]:
    dest = session.final_dest
    node.repairs.pop(dest, None)
    node.repair_failed_at[dest] = now
    entry = node.routes.get(dest)
    if entry is not None:
        entry.valid = False
    actions: list[Action] = [
        _phase_note(node, (node.address, session.rreq_id), session.phase, BeePhase.IDLE, "failed"),
        Note("repair_end", {"protocol": "lrabc", "dest": dest, "success": False,
                            "session": session.session_id, "abandoned": session.abandoned,
                            "trials": session.trials_used, "candidates": session.candidates}),
    ]
    session.phase = BeePhase.IDLE
    notified = set()
    for packet in session.buffered:
        if packet.src == node.address:
            # the upstream node is the source itself: fall back to a fresh discovery
            actions += originate_route_discovery(node, dest, now, packet)
            continue
        actions.append(Drop("RepairFailed", packet=packet))
        if packet.src not in notified:
            notified.add(packet.src)
            actions += send_rerr(node, ErrorCode.REPAIR_FAILED, dest, packet.src, now)
    return actions


def repair_timeout(node: NodeState, dest: int, session_id: int, rreq_id: int,
                   now: int) -> list[Action]:
    session = node.repairs.get(dest)
    if session is None or session.session_id != session_id or session.rreq_id != rreq_id:
        return []
    return finalize_repair(session, node, now)


def buffer_if_repairing(node: NodeState, packet: DataPacket) -> bool:
    session = node.repairs.get(packet.dest)
    if session is None:
        return False
    session.buffered.append(packet)
    return True

