import pytest

from conftest import kinds, make_node
from lrabc.repair import (
    compare_local_links, detect_link_break, finalize_repair, onlooker_handle_local_rrep,
    repair_timeout, scout_handle_local_rreq, snh_window_close,
)
from lrabc.routing import compute_ael_update, install_route, invalidate_via, route_lookup
from lrabc.state import BeePhase, Broadcast, CandidateLink, Drop, Note, StartTimer, Unicast
from lrabc.wire import ControlMessage, DataPacket, MessageKind


def packet(src=1, dest=8, uid=1):
    return DataPacket(uid=uid, src=src, dest=dest, seq=uid, created_us=0, size=50)


def upstream():
    """Node 1 routes to 8 via 2, whose next hop is 3."""
    node = make_node(1, [2, 9])
    install_route(node, 8, 2, 7, now=0, second_next_hop=3)
    return node


def start_repair(node, now=0):
    session, actions = detect_link_break(node, 2, packet(), now)
    request = next(a.msg for a in actions if isinstance(a, Broadcast))
    return session, actions, request


def local_rreq(path=(1,), hop=None, rreq_id=1, snh=3, ael=25600):
    return ControlMessage(MessageKind.LOCAL_RREQ, dest=8, originator=path[0],
                          hop_count=len(path) - 1 if hop is None else hop, ael=ael,
                          rreq_id=rreq_id, second_next_hop=snh, path=path)


def local_rrep(path, hop=0, ael=25600, rreq_id=1, snh=3, wl=0):
    return ControlMessage(MessageKind.LOCAL_RREP, dest=8, originator=path[0], hop_count=hop,
                          ael=ael, rreq_id=rreq_id, second_next_hop=snh, path=path, weak_links=wl)


class TestCompareLocalLinks:
    @pytest.mark.parametrize("a,b", [
        (CandidateLink(5, 3, 200, 2), CandidateLink(4, 1, 199, 0)),   # energy first
        (CandidateLink(5, 2, 200, 2), CandidateLink(4, 3, 200, 0)),   # then fewer hops
        (CandidateLink(5, 2, 200, 0), CandidateLink(4, 2, 200, 1)),   # then fewer weak links
        (CandidateLink(4, 2, 200, 0), CandidateLink(5, 2, 200, 0)),   # then lower address
    ])
    def test_order(self, a, b):
        assert compare_local_links(a, b) > 0
        assert compare_local_links(b, a) < 0

    def test_equal(self):
        link = CandidateLink(4, 2, 200, 0)
        assert compare_local_links(link, link) == 0

    def test_link_spans_a_hop(self):
        with pytest.raises(ValueError):
            CandidateLink(4, 0, 200, 0)


class TestScoutStart:
    def test_break_starts_session_and_broadcasts(self):
        node = upstream()
        session, actions, request = start_repair(node)
        assert kinds(actions) == ["Note", "Note", "Broadcast", "StartTimer"]
        assert actions[0].event == "repair_start"
        assert actions[1].fields["to"] == "scout"
        assert (session.abandoned, session.second_next_hop, session.phase) == (2, 3, BeePhase.SCOUT)
        assert request.path == (1,) and request.second_next_hop == 3 and request.dest == 8
        assert request.ael == node.el
        assert actions[3].duration == node.params.repair_window

    def test_packets_buffer_during_repair(self):
        node = upstream()
        session, _, _ = start_repair(node)
        assert detect_link_break(node, 2, packet(uid=2), 10)[1] == []
        assert len(session.buffered) == 2

    def test_destination_was_the_failed_hop(self):
        node = make_node(3, [2, 8])
        install_route(node, 8, 8, 1, now=0)
        install_route(node, 1, 2, 2, now=0)
        _, actions = detect_link_break(node, 8, packet(), 0)
        assert isinstance(actions[0], Drop) and actions[0].reason == "NoSecondNextHop"
        assert isinstance(actions[1], Unicast) and actions[1].msg.kind is MessageKind.RERR

    def test_source_without_snh_rediscovers(self):
        node = make_node(1, [2])
        install_route(node, 8, 2, 7, now=0)
        invalidate_via(node, 2)
        _, actions = detect_link_break(node, 2, packet(), 0)
        assert "Broadcast" in kinds(actions)
        assert next(a for a in actions if isinstance(a, Broadcast)).msg.kind is MessageKind.RREQ


class TestRelay:
    def test_forwards_with_path_and_folded_energy(self):
        relay = make_node(9, [1, 3], mah=50.0)
        actions = scout_handle_local_rreq(relay, local_rreq(), sender=1, now=0)
        assert kinds(actions) == ["Note", "Broadcast"]
        assert actions[0].fields == {"upstream": 1, "rreq_id": 1, "from": "idle", "to": "scout",
                                     "cause": "local_rreq"}
        out = actions[1].msg
        assert out.path == (1, 9) and out.hop_count == 1
        assert out.ael == compute_ael_update(25600, 1, relay.el)

    def test_same_copy_twice(self):
        relay = make_node(9, [1, 3])
        scout_handle_local_rreq(relay, local_rreq(), sender=1, now=0)
        assert scout_handle_local_rreq(relay, local_rreq(), sender=1, now=1)[0].reason == "Duplicate"

    def test_copy_limit(self):
        relay = make_node(9, [1, 3, 5])
        scout_handle_local_rreq(relay, local_rreq(), sender=1, now=0)
        [drop] = scout_handle_local_rreq(relay, local_rreq(path=(1, 5)), sender=5, now=1)
        assert drop.reason == "CopyLimit"

    def test_exhaustive_relays_every_loop_free_copy(self):
        relay = make_node(9, [1, 3, 5], local_copy_limit=None)
        scout_handle_local_rreq(relay, local_rreq(), sender=1, now=0)
        [out] = scout_handle_local_rreq(relay, local_rreq(path=(1, 5)), sender=5, now=1)
        assert out.msg.path == (1, 5, 9)

    def test_loop_dropped(self):
        relay = make_node(9, [1, 3])
        assert scout_handle_local_rreq(relay, local_rreq(path=(1, 9, 5)), sender=5, now=0)[0].reason == "Duplicate"

    def test_ttl(self):
        relay = make_node(9, [5, 6], local_ttl=2)
        [drop] = scout_handle_local_rreq(relay, local_rreq(path=(1, 4, 5)), sender=5, now=0)
        assert drop.reason == "LocalTtl"

    def test_last_hop_only_when_target_adjacent(self):
        far = make_node(9, [5, 6], local_ttl=2)
        near = make_node(7, [5, 3], local_ttl=2)
        assert scout_handle_local_rreq(far, local_rreq(path=(1, 5)), 5, 0)[0].reason == "LocalTtl"
        assert isinstance(scout_handle_local_rreq(near, local_rreq(path=(1, 5)), 5, 0)[-1], Broadcast)


class TestSecondNextHop:
    def test_window_then_one_reply_per_copy(self):
        snh = make_node(3, [9, 4, 5])
        install_route(snh, 8, 4, 5, now=0)
        [timer] = scout_handle_local_rreq(snh, local_rreq(path=(1, 9)), sender=9, now=0)
        assert isinstance(timer, StartTimer) and timer.duration == snh.params.snh_window
        assert scout_handle_local_rreq(snh, local_rreq(path=(1, 5)), sender=5, now=10) == []
        replies = snh_window_close(snh, timer.key, now=timer.duration)
        assert [(r.next_hop, r.msg.path) for r in replies] == [(9, (1, 9, 3, 4)), (5, (1, 5, 3, 4))]
        assert all(r.msg.second_next_hop == 3 and r.msg.hop_count == 0 for r in replies)
        assert snh_window_close(snh, timer.key, now=timer.duration) == []

    def test_late_copy_dropped(self):
        snh = make_node(3, [9, 5])
        [timer] = scout_handle_local_rreq(snh, local_rreq(path=(1, 9)), sender=9, now=0)
        snh_window_close(snh, timer.key, now=timer.duration)
        assert scout_handle_local_rreq(snh, local_rreq(path=(1, 5)), 5, 1)[0].reason == "WindowClosed"


class TestOnlookers:
    def relay_in_scout(self):
        relay = make_node(9, [1, 3])
        install_route(relay, 1, 1, 1, now=0)
        scout_handle_local_rreq(relay, local_rreq(), sender=1, now=0)
        return relay

    def test_relay_turns_employed_and_forwards_back(self):
        relay = self.relay_in_scout()
        actions = onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3, 4)), sender=3, now=5)
        assert kinds(actions) == ["Note", "Unicast"]
        assert actions[0].fields["to"] == "employed" and actions[0].fields["cause"] == "local_rrep"
        out = actions[1]
        assert out.next_hop == 1 and out.msg.hop_count == 1
        assert route_lookup(relay, 8, 5).next_hop == 3
        assert relay.routes[8].second_next_hop == 4

    def test_idle_relay_refuses(self):
        relay = make_node(9, [1, 3])
        [drop] = onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3)), sender=3, now=5)
        assert drop.reason == "NoSession"

    def test_worse_reply_for_same_return_path_dropped(self):
        relay = self.relay_in_scout()
        onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3), ael=30000), sender=3, now=5)
        actions = onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3), ael=100), sender=3, now=6)
        assert actions[-1].reason == "WorseCandidate"

    def test_fewer_weak_links_survive_lower_energy(self):
        # rounding at later folds can level the energy, so the weak-link count may still decide
        relay = self.relay_in_scout()
        onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3), ael=30000, hop=1, wl=1), sender=3, now=5)
        actions = onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3), ael=29999, hop=1), sender=3, now=6)
        assert isinstance(actions[-1], Unicast)
        again = onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3), ael=29000, hop=1, wl=1), sender=3, now=7)
        assert again[-1].reason == "WorseCandidate"

    def test_sender_must_be_next_on_record(self):
        relay = self.relay_in_scout()
        [drop] = onlooker_handle_local_rrep(relay, local_rrep((1, 9, 3)), sender=5, now=5)
        assert drop.reason == "NoSession"


class TestAnchor:
    def test_best_link_then_switch(self):
        node = upstream()
        session, _, request = start_repair(node)
        low = local_rrep((1, 9, 3), hop=1, ael=100, rreq_id=request.rreq_id)
        high = local_rrep((1, 5, 3), hop=1, ael=9000, rreq_id=request.rreq_id)
        first = onlooker_handle_local_rrep(node, low, sender=9, now=10)
        assert [a.event for a in first if isinstance(a, Note)] == ["phase", "best_link"]
        assert session.phase is BeePhase.EMPLOYED
        onlooker_handle_local_rrep(node, high, sender=5, now=11)
        assert session.best_link.next_hop_toward_snh == 5
        actions = repair_timeout(node, 8, session.session_id, request.rreq_id, now=node.params.repair_window)
        end = next(a for a in actions if isinstance(a, Note) and a.event == "repair_end")
        assert end.fields["success"] and end.fields["path"] == [1, 5, 3]
        assert route_lookup(node, 8, 0).next_hop == 5
        assert isinstance(actions[-1], Unicast) and actions[-1].next_hop == 5
        assert 8 not in node.repairs

    def test_reply_through_abandoned_node_ignored(self):
        node = upstream()
        session, _, request = start_repair(node)
        reply = local_rrep((1, 2, 3), hop=1, rreq_id=request.rreq_id)
        assert onlooker_handle_local_rrep(node, reply, sender=2, now=10)[-1].reason == "ThroughAbandoned"
        assert session.best_link is None

    def test_retry_then_fail(self):
        node = upstream()
        install_route(node, 1, 1, 0, now=0)
        session, _, request = start_repair(node)
        retry = finalize_repair(session, node, now=100)
        assert [a.fields["cause"] for a in retry if isinstance(a, Note)] == ["retry", "broadcast"]
        assert session.trials_used == 2 and len(session.trial_ids) == 2
        failed = finalize_repair(session, node, now=200)
        end = next(a for a in failed if isinstance(a, Note) and a.event == "repair_end")
        assert not end.fields["success"]
        assert node.repair_failed_at[8] == 200
        # the upstream node is the data source, so it falls back to discovery
        assert any(isinstance(a, Broadcast) and a.msg.kind is MessageKind.RREQ for a in failed)

    def test_late_reply_from_earlier_trial_accepted(self):
        node = upstream()
        session, _, request = start_repair(node)
        finalize_repair(session, node, now=100)
        reply = local_rrep((1, 9, 3), hop=1, rreq_id=request.rreq_id)
        actions = onlooker_handle_local_rrep(node, reply, sender=9, now=110)
        assert session.best_link is not None
        # the phase change is reported against the trial now running
        [note] = [a for a in actions if isinstance(a, Note) and a.event == "phase"]
        assert note.fields["rreq_id"] == session.rreq_id != request.rreq_id
        assert (note.fields["from"], note.fields["to"]) == ("scout", "employed")

    def test_stale_timer_ignored(self):
        node = upstream()
        session, _, request = start_repair(node)
        assert repair_timeout(node, 8, session.session_id, request.rreq_id + 1, now=5) == []
