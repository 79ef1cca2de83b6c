"""Control-message codec.

Every control frame starts with the same 14-octet header::

    octet 0       Type
    octet 1       R | D | O | Hop Count (3 flag bits, 5 hop bits, MSB first)
    octet 2       CT
    octet 3       WL
    octets 4-5    AEL, 8.8 fixed-point mAh, big-endian
    octet 6       RREQ_ID
    octet 7       RREP_ID
    octets 8-9    link-layer destination address
    octets 10-11  link-layer originator address
    octets 12-13  link-layer second next hop address

Local_RREQ / Local_RREP append a path record (count octet + 2 octets per
address) listing the nodes that relayed the request, upstream node first.
Data frames append a 2-octet payload length and the payload.

RERR reuses the header: CT holds the error code, ``dest`` the unreachable
destination and ``originator`` the data originator the error is sent to.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

HEADER = struct.Struct(">BBBBHBBHHH")
HEADER_LEN = HEADER.size  # 14

NO_ADDRESS = 0x0000
BROADCAST = 0xFFFF
MAX_HOPS = 31
AEL_SCALE = 256  # 8.8 fixed point
AEL_MAX = 0xFFFF
MAX_PATH_RECORD = 127


class CodecError(ValueError):
    pass


class Truncated(CodecError):
    pass


class UnknownType(CodecError):
    pass


class InvariantViolation(CodecError):
    pass


class MessageKind(enum.IntEnum):
    RREQ = 1
    RREP = 2
    LOCAL_RREQ = 3
    LOCAL_RREP = 4
    RERR = 5
    DATA = 6


LOCAL_KINDS = (MessageKind.LOCAL_RREQ, MessageKind.LOCAL_RREP)


class ErrorCode(enum.IntEnum):
    NO_ROUTE = 1
    REPAIR_FAILED = 2
    NODE_UNREACHABLE = 3


def ael_from_mah(mah: float) -> int:
    return min(AEL_MAX, max(0, round(mah * AEL_SCALE)))


def ael_to_mah(ael: int) -> float:
    return ael / AEL_SCALE


@dataclass(frozen=True)
class ControlMessage:
    kind: MessageKind
    dest: int
    originator: int
    hop_count: int = 0
    flag_r: bool = False
    flag_d: bool = False
    flag_o: bool = False
    cost_type: int = 0
    weak_links: int = 0
    ael: int = 0
    rreq_id: int = 0
    rrep_id: int = 0
    second_next_hop: int = NO_ADDRESS
    path: tuple[int, ...] = field(default=())

    def validate(self) -> None:
        if self.kind is MessageKind.DATA:
            raise InvariantViolation("data frames are not control messages")
        if not 0 <= self.hop_count <= MAX_HOPS:
            raise InvariantViolation(f"hop_count {self.hop_count} outside 5-bit field")
        if not 0 <= self.weak_links <= self.hop_count:
            raise InvariantViolation(f"wl {self.weak_links} > hop_count {self.hop_count}")
        for name in ("cost_type", "rreq_id", "rrep_id"):
            if not 0 <= getattr(self, name) <= 0xFF:
                raise InvariantViolation(f"{name} does not fit one octet")
        if not 0 <= self.ael <= AEL_MAX:
            raise InvariantViolation("ael outside 8.8 fixed-point range")
        for addr in (self.dest, self.originator, self.second_next_hop, *self.path):
            if not 0 <= addr <= 0xFFFF:
                raise InvariantViolation(f"address {addr!r} is not 16-bit")
        if self.originator == BROADCAST:
            raise InvariantViolation("broadcast address cannot originate")
        if self.path and self.kind not in LOCAL_KINDS:
            raise InvariantViolation("only local repair messages carry a path record")
        if len(self.path) > MAX_PATH_RECORD:
            raise InvariantViolation("path record too long")
        if self.kind is MessageKind.RERR and self.cost_type not in ErrorCode._value2member_map_:
            raise InvariantViolation(f"unknown RERR error code {self.cost_type}")


@dataclass(frozen=True)
class RerrPayload:
    error_code: ErrorCode
    failed_dest: int
    originator_of_data: int

    def to_message(self, hop_count: int = 0) -> ControlMessage:
        return ControlMessage(
            MessageKind.RERR,
            dest=self.failed_dest,
            originator=self.originator_of_data,
            hop_count=hop_count,
            cost_type=int(self.error_code),
        )

    @classmethod
    def from_message(cls, msg: ControlMessage) -> RerrPayload:
        return cls(ErrorCode(msg.cost_type), msg.dest, msg.originator)


def _pack_header(kind, flags_hop, ct, wl, ael, rreq_id, rrep_id, dest, orig, snh) -> bytes:
    return HEADER.pack(int(kind), flags_hop, ct, wl, ael, rreq_id, rrep_id, dest, orig, snh)


def encode_message(msg: ControlMessage) -> bytes:
    msg.validate()
    flags_hop = (msg.flag_r << 7) | (msg.flag_d << 6) | (msg.flag_o << 5) | msg.hop_count
    out = _pack_header(
        msg.kind, flags_hop, msg.cost_type, msg.weak_links, msg.ael,
        msg.rreq_id, msg.rrep_id, msg.dest, msg.originator, msg.second_next_hop,
    )
    if msg.path:
        out += bytes([len(msg.path)]) + struct.pack(f">{len(msg.path)}H", *msg.path)
    return out


def decode_message(data: bytes) -> ControlMessage:
    if len(data) < HEADER_LEN:
        raise Truncated(f"{len(data)} octets, need {HEADER_LEN}")
    kind_code, flags_hop, ct, wl, ael, rreq_id, rrep_id, dest, orig, snh = HEADER.unpack_from(data)
    try:
        kind = MessageKind(kind_code)
    except ValueError:
        raise UnknownType(f"type code 0x{kind_code:02X}") from None
    if kind is MessageKind.DATA:
        raise UnknownType("data frame passed to control decoder")
    path: tuple[int, ...] = ()
    rest = data[HEADER_LEN:]
    if rest:
        if kind not in LOCAL_KINDS:
            raise InvariantViolation(f"{len(rest)} trailing octets after {kind.name}")
        n = rest[0]
        if len(rest) < 1 + 2 * n:
            raise Truncated("path record cut short")
        if len(rest) != 1 + 2 * n:
            raise InvariantViolation("trailing octets after path record")
        if n == 0:
            raise InvariantViolation("empty path record must be omitted")
        path = struct.unpack_from(f">{n}H", rest, 1)
    msg = ControlMessage(
        kind,
        dest=dest,
        originator=orig,
        hop_count=flags_hop & 0x1F,
        flag_r=bool(flags_hop & 0x80),
        flag_d=bool(flags_hop & 0x40),
        flag_o=bool(flags_hop & 0x20),
        cost_type=ct,
        weak_links=wl,
        ael=ael,
        rreq_id=rreq_id,
        rrep_id=rrep_id,
        second_next_hop=snh,
        path=path,
    )
    msg.validate()
    return msg


@dataclass
class DataPacket:
    """Application packet. ``path`` is simulator bookkeeping, not on the wire."""

    uid: int
    src: int
    dest: int
    seq: int
    created_us: int
    size: int
    hop_count: int = 0
    path: list[int] = field(default_factory=list)


DATA_LEN = struct.Struct(">H")


def encode_data(packet: DataPacket, payload: bytes | None = None) -> bytes:
    """Data envelope: header with Type=Data and the sequence number split
    across the RREQ_ID/RREP_ID octets, then length and payload."""
    if payload is None:
        payload = bytes(packet.size)
    if not 0 <= packet.seq <= 0xFFFF or len(payload) > 0xFFFF:
        raise InvariantViolation("data sequence or payload out of range")
    hop = min(packet.hop_count, MAX_HOPS)
    head = _pack_header(
        MessageKind.DATA, hop, 0, 0, 0, packet.seq >> 8, packet.seq & 0xFF,
        packet.dest, packet.src, NO_ADDRESS,
    )
    return head + DATA_LEN.pack(len(payload)) + payload


def decode_data(data: bytes) -> tuple[DataPacket, bytes]:
    if len(data) < HEADER_LEN + DATA_LEN.size:
        raise Truncated("data frame shorter than header")
    kind_code, flags_hop, _, _, _, hi, lo, dest, src, _ = HEADER.unpack_from(data)
    if kind_code != MessageKind.DATA:
        raise UnknownType(f"type code 0x{kind_code:02X} is not data")
    (length,) = DATA_LEN.unpack_from(data, HEADER_LEN)
    payload = data[HEADER_LEN + DATA_LEN.size:]
    if len(payload) != length:
        raise Truncated("payload length mismatch")
    packet = DataPacket(uid=-1, src=src, dest=dest, seq=(hi << 8) | lo, created_us=0,
                        size=length, hop_count=flags_hop & 0x1F)
    return packet, bytes(payload)
