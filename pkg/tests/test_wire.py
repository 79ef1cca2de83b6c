import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrabc.wire import (
    BROADCAST, HEADER_LEN, LOCAL_KINDS, CodecError, ControlMessage, DataPacket, ErrorCode,
    InvariantViolation, MessageKind, RerrPayload, Truncated, UnknownType, ael_from_mah,
    decode_data, decode_message, encode_data, encode_message,
)

CONTROL_KINDS = [k for k in MessageKind if k is not MessageKind.DATA]
u8 = st.integers(0, 0xFF)
addr = st.integers(0, 0xFFFE)


@st.composite
def messages(draw):
    kind = draw(st.sampled_from(CONTROL_KINDS))
    hop = draw(st.integers(0, 31))
    path = tuple(draw(st.lists(addr, min_size=1, max_size=20))) if kind in LOCAL_KINDS and draw(st.booleans()) else ()
    ct = draw(st.sampled_from([int(c) for c in ErrorCode])) if kind is MessageKind.RERR else draw(u8)
    return ControlMessage(
        kind, dest=draw(addr), originator=draw(addr), hop_count=hop,
        flag_r=draw(st.booleans()), flag_d=draw(st.booleans()), flag_o=draw(st.booleans()),
        cost_type=ct, weak_links=draw(st.integers(0, hop)), ael=draw(st.integers(0, 0xFFFF)),
        rreq_id=draw(u8), rrep_id=draw(u8), second_next_hop=draw(addr), path=path,
    )


def random_message(rng: random.Random) -> ControlMessage:
    kind = rng.choice(CONTROL_KINDS)
    hop = rng.randint(0, 31)
    path = ()
    if kind in LOCAL_KINDS and rng.random() < 0.7:
        path = tuple(rng.randint(0, 0xFFFE) for _ in range(rng.randint(1, 12)))
    return ControlMessage(
        kind, dest=rng.randint(0, 0xFFFF), originator=rng.randint(0, 0xFFFE), hop_count=hop,
        flag_r=rng.random() < 0.5, flag_d=rng.random() < 0.5, flag_o=rng.random() < 0.5,
        cost_type=rng.randint(1, 3) if kind is MessageKind.RERR else rng.randint(0, 255),
        weak_links=rng.randint(0, hop), ael=rng.randint(0, 0xFFFF),
        rreq_id=rng.randint(0, 255), rrep_id=rng.randint(0, 255),
        second_next_hop=rng.randint(0, 0xFFFF), path=path,
    )


class TestControlCodec:
    @given(messages())
    @settings(max_examples=2000)
    def test_round_trip(self, msg):
        assert decode_message(encode_message(msg)) == msg

    @given(messages())
    @settings(max_examples=500)
    def test_encoding_is_canonical(self, msg):
        data = encode_message(msg)
        assert encode_message(decode_message(data)) == data

    def test_fuzz_round_trip_100k(self):
        rng = random.Random(20240601)
        for _ in range(100_000):
            msg = random_message(rng)
            assert decode_message(encode_message(msg)) == msg

    def test_fuzz_arbitrary_bytes(self):
        # random octets either decode to a message that re-encodes identically
        # or raise a codec error; nothing else escapes
        rng = random.Random(7)
        decoded = 0
        for _ in range(20_000):
            data = bytes([rng.randint(1, 5)]) + rng.randbytes(rng.randint(0, 30))
            try:
                msg = decode_message(data)
            except CodecError:
                continue
            decoded += 1
            assert encode_message(msg) == data
        assert decoded > 0

    def test_header_is_fourteen_octets(self):
        msg = ControlMessage(MessageKind.RREQ, dest=8, originator=1)
        assert HEADER_LEN == 14
        assert len(encode_message(msg)) == 14

    def test_field_layout(self):
        msg = ControlMessage(MessageKind.RREP, dest=0x0102, originator=0x0304, hop_count=5,
                             flag_r=True, flag_o=True, cost_type=9, weak_links=2, ael=0x1A2B,
                             rreq_id=7, rrep_id=8, second_next_hop=0x0506)
        assert encode_message(msg) == bytes.fromhex("02a5" "0902" "1a2b" "07" "08" "0102" "0304" "0506")

    def test_path_record_layout(self):
        msg = ControlMessage(MessageKind.LOCAL_RREQ, dest=8, originator=1, path=(1, 9))
        assert encode_message(msg)[HEADER_LEN:] == bytes([2, 0, 1, 0, 9])

    @pytest.mark.parametrize("n", range(HEADER_LEN))
    def test_truncated_header(self, n):
        data = encode_message(ControlMessage(MessageKind.RREQ, dest=8, originator=1))
        with pytest.raises(Truncated):
            decode_message(data[:n])

    def test_truncated_path(self):
        data = encode_message(ControlMessage(MessageKind.LOCAL_RREP, dest=8, originator=1, path=(1, 2, 3)))
        with pytest.raises(Truncated):
            decode_message(data[:-1])

    @pytest.mark.parametrize("code", [0, 7, 0x42, 0xFF])
    def test_unknown_type(self, code):
        data = bytes([code]) + bytes(HEADER_LEN - 1)
        with pytest.raises(UnknownType):
            decode_message(data)

    def test_data_code_rejected_by_control_decoder(self):
        with pytest.raises(UnknownType):
            decode_message(bytes([6]) + bytes(HEADER_LEN - 1))

    @pytest.mark.parametrize("changes", [
        {"hop_count": 32},
        {"hop_count": 2, "weak_links": 3},
        {"rreq_id": 256},
        {"ael": 0x10000},
        {"dest": 0x10000},
        {"originator": BROADCAST},
        {"path": (1, 2)},
    ])
    def test_invariants(self, changes):
        msg = ControlMessage(MessageKind.RREQ, **{"dest": 8, "originator": 1, **changes})
        with pytest.raises(InvariantViolation):
            encode_message(msg)

    def test_trailing_octets_on_plain_kind(self):
        data = encode_message(ControlMessage(MessageKind.RREQ, dest=8, originator=1)) + b"\x00"
        with pytest.raises(InvariantViolation):
            decode_message(data)

    def test_empty_path_record_rejected(self):
        data = encode_message(ControlMessage(MessageKind.LOCAL_RREQ, dest=8, originator=1)) + b"\x00"
        with pytest.raises(InvariantViolation):
            decode_message(data)

    def test_weak_links_checked_on_decode(self):
        data = bytearray(encode_message(ControlMessage(MessageKind.RREQ, dest=8, originator=1, hop_count=1)))
        data[3] = 2
        with pytest.raises(InvariantViolation):
            decode_message(bytes(data))


class TestRerr:
    @pytest.mark.parametrize("code", list(ErrorCode))
    def test_payload_round_trip(self, code):
        payload = RerrPayload(code, failed_dest=8, originator_of_data=1)
        msg = decode_message(encode_message(payload.to_message(hop_count=3)))
        assert RerrPayload.from_message(msg) == payload
        assert msg.hop_count == 3

    def test_unknown_error_code(self):
        with pytest.raises(InvariantViolation):
            encode_message(ControlMessage(MessageKind.RERR, dest=8, originator=1, cost_type=9))


class TestDataCodec:
    @given(seq=st.integers(0, 0xFFFF), src=addr, dest=addr, hop=st.integers(0, 31),
           payload=st.binary(max_size=128))
    def test_round_trip(self, seq, src, dest, hop, payload):
        packet = DataPacket(uid=0, src=src, dest=dest, seq=seq, created_us=0, size=len(payload), hop_count=hop)
        back, body = decode_data(encode_data(packet, payload))
        assert (back.src, back.dest, back.seq, back.hop_count, back.size) == (src, dest, seq, hop, len(payload))
        assert body == payload

    def test_default_payload_is_size_zeros(self):
        packet = DataPacket(uid=0, src=1, dest=2, seq=1, created_us=0, size=50)
        data = encode_data(packet)
        assert len(data) == HEADER_LEN + 2 + 50
        assert data[0] == MessageKind.DATA

    def test_length_mismatch(self):
        data = encode_data(DataPacket(uid=0, src=1, dest=2, seq=1, created_us=0, size=4))
        with pytest.raises(Truncated):
            decode_data(data[:-1])

    def test_control_frame_rejected(self):
        data = encode_message(ControlMessage(MessageKind.RREQ, dest=8, originator=1)) + struct.pack(">H", 0)
        with pytest.raises(UnknownType):
            decode_data(data)


@pytest.mark.parametrize("mah,expected", [(0, 0), (1.0, 256), (0.5, 128), (1000, 0xFFFF), (-1, 0)])
def test_ael_fixed_point(mah, expected):
    assert ael_from_mah(mah) == expected
