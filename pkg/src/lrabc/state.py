"""Per-node protocol state and the actions handlers hand back to the engine."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Union

from .energy import Battery
from .wire import ControlMessage, DataPacket

US = 1_000_000  # microseconds per second


class Protocol(str, enum.Enum):
    LOAD = "load"
    LRABC = "lrabc"


@dataclass(frozen=True)
class ProtocolParams:
    per_hop_delay_us: int = 20_000
    hop_limit: int = 31
    route_lifetime_us: int = 30 * US
    local_ttl: int = 3
    trial_limit: int = 2
    local_copy_limit: int | None = 1  # Local_RREQ copies a relay forwards; None: every loop-free one
    rerr_rate: int = 1
    weak_threshold: float = 0.5
    discovery_retries: int = 1
    # multipliers of per_hop_delay; None means the documented default
    repair_window_us: int | None = None
    snh_window_us: int | None = None
    discovery_timeout_us: int | None = None
    load_deadline_us: int | None = None

    @property
    def discovery_timeout(self) -> int:
        if self.discovery_timeout_us is not None:
            return self.discovery_timeout_us
        return 2 * self.hop_limit * self.per_hop_delay_us

    @property
    def load_deadline(self) -> int:
        if self.load_deadline_us is not None:
            return self.load_deadline_us
        return 2 * self.hop_limit * self.per_hop_delay_us

    @property
    def repair_window(self) -> int:
        if self.repair_window_us is not None:
            return self.repair_window_us
        return 4 * self.per_hop_delay_us * self.local_ttl

    @property
    def snh_window(self) -> int:
        if self.snh_window_us is not None:
            return self.snh_window_us
        return self.per_hop_delay_us

    @property
    def record_lifetime(self) -> int:
        return 2 * self.discovery_timeout


@dataclass
class RoutingEntry:
    dest: int
    next_hop: int
    hop_count: int
    lifetime_expiry: int
    route_cost: int = 0
    weak_links: int = 0
    second_next_hop: int = 0
    precursors: list[int] = field(default_factory=list)
    valid: bool = True

    def add_precursor(self, addr: int) -> None:
        if addr not in self.precursors:
            self.precursors.append(addr)


@dataclass
class RouteRequestRecord:
    originator: int
    rreq_id: int
    first_seen: int
    best_cost_seen: tuple[int, int]
    best_ael_seen: int


class BeePhase(str, enum.Enum):
    IDLE = "idle"
    SCOUT = "scout"
    EMPLOYED = "employed"
    ONLOOKER = "onlooker"


@dataclass(frozen=True)
class CandidateLink:
    next_hop_toward_snh: int
    hop_count: int
    ael: int
    weak_links: int
    rrep_id: int = 0

    def __post_init__(self):
        if self.hop_count < 1:
            raise ValueError("a local link spans at least one hop")

    def key(self) -> tuple[int, int, int, int]:
        return (self.ael, self.hop_count, self.weak_links, self.next_hop_toward_snh)


@dataclass
class RepairSession:
    session_id: int
    upstream: int
    abandoned: int
    second_next_hop: int
    final_dest: int
    data_originator: int
    deadline: int = 0
    best_link: CandidateLink | None = None
    best_path: tuple[int, ...] = ()
    phase: BeePhase = BeePhase.IDLE
    trials_used: int = 0
    rreq_id: int = 0
    trial_ids: list[int] = field(default_factory=list)  # every trial's RREQ_ID, oldest first
    buffered: list[DataPacket] = field(default_factory=list)
    candidates: int = 0

    def __post_init__(self):
        if self.second_next_hop == self.abandoned:
            raise ValueError("second next hop cannot be the abandoned node")


@dataclass
class LoadRepairSession:
    session_id: int
    upstream: int
    final_dest: int
    data_originator: int
    deadline: int = 0
    rreq_id: int = 0
    buffered: list[DataPacket] = field(default_factory=list)


class RerrBudget:
    """Sliding one-second window limiter on RERR transmissions."""

    def __init__(self, rate: int):
        self.rate = rate
        self.sent: deque[int] = deque()

    def allow(self, now: int) -> bool:
        while self.sent and self.sent[0] <= now - US:
            self.sent.popleft()
        if len(self.sent) >= self.rate:
            return False
        self.sent.append(now)
        return True


@dataclass
class Discovery:
    dest: int
    token: int
    retries: int = 0
    queue: deque = field(default_factory=deque)


@dataclass
class ScoutRecord:
    """What an intermediate node remembers about one local repair."""

    first_seen: int
    phase: BeePhase = BeePhase.IDLE
    paths: set = field(default_factory=set)
    relayed: int = 0
    best: dict = field(default_factory=dict)  # (prefix, length) -> forwarded CandidateLinks
    installed_hops: int | None = None


@dataclass
class SnhWindow:
    opened: int
    copies: list[tuple[int, ControlMessage]] = field(default_factory=list)
    closed: bool = False


@dataclass
class NodeState:
    address: int
    neighbors: frozenset[int]
    battery: Battery
    params: ProtocolParams = field(default_factory=ProtocolParams)
    protocol: Protocol = Protocol.LRABC
    weak_neighbors: frozenset[int] = frozenset()
    routes: dict[int, RoutingEntry] = field(default_factory=dict)
    rreq_seen: dict[tuple[int, int], RouteRequestRecord] = field(default_factory=dict)
    pending: dict[int, Discovery] = field(default_factory=dict)
    repairs: dict[int, RepairSession] = field(default_factory=dict)
    load_repairs: dict[int, LoadRepairSession] = field(default_factory=dict)
    repair_failed_at: dict[int, int] = field(default_factory=dict)
    scout: dict[tuple[int, int], ScoutRecord] = field(default_factory=dict)
    snh_windows: dict[tuple[int, int], SnhWindow] = field(default_factory=dict)
    failed: bool = False
    rreq_counter: int = 0
    rrep_counter: int = 0
    token_counter: int = 0
    rerr_budget: RerrBudget | None = None

    def __post_init__(self):
        if self.rerr_budget is None:
            self.rerr_budget = RerrBudget(self.params.rerr_rate)

    @property
    def el(self) -> int:
        return self.battery.el

    def next_rreq_id(self) -> int:
        self.rreq_counter = (self.rreq_counter + 1) & 0xFF
        return self.rreq_counter

    def next_rrep_id(self) -> int:
        self.rrep_counter = (self.rrep_counter + 1) & 0xFF
        return self.rrep_counter

    def next_token(self) -> int:
        self.token_counter += 1
        return self.token_counter

    def is_weak(self, neighbor: int) -> bool:
        return neighbor in self.weak_neighbors


# actions ------------------------------------------------------------------

@dataclass(frozen=True)
class Broadcast:
    msg: ControlMessage


@dataclass(frozen=True)
class Unicast:
    next_hop: int
    msg: Union[ControlMessage, DataPacket]


@dataclass(frozen=True)
class Deliver:
    packet: DataPacket


@dataclass(frozen=True)
class Enqueue:
    packet: DataPacket


@dataclass(frozen=True)
class Drop:
    reason: str
    packet: DataPacket | None = None
    msg: ControlMessage | None = None


@dataclass(frozen=True)
class StartTimer:
    kind: str
    duration: int
    key: Any


@dataclass(frozen=True)
class Note:
    """Lifecycle record for the trace (phase changes, repair start/end)."""

    event: str
    fields: dict


Action = Union[Broadcast, Unicast, Deliver, Enqueue, Drop, StartTimer, Note]
