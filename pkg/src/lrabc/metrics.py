"""Performance metrics computed from an event trace.

Every function here is a pure fold over the trace, so recomputing a metric
from a stored NDJSON trace gives exactly the value reported at run time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

from .energy import NANO
from .state import US
from .trace import EventTrace
from .wire import MessageKind, decode_message

ENERGY_KINDS = ("tx", "rx", "idle", "depleted")


def compute_pdr(trace: EventTrace) -> float:
    sent = sum(1 for _ in trace.of_kind("app_send"))
    if sent == 0:
        return 0.0
    return sum(1 for _ in trace.of_kind("deliver")) / sent


def compute_throughput(trace: EventTrace, packet_size: int) -> float:
    """Delivered bits over the span from the first application send to the
    last delivery, in bits per second."""
    deliveries = [r.time for r in trace.of_kind("deliver")]
    first = trace.first("app_send")
    if not deliveries or first is None:
        return 0.0
    span = max(deliveries) - first.time
    if span <= 0:
        return 0.0
    return len(deliveries) * packet_size * 8 / (span / US)


def compute_avg_delay(trace: EventTrace) -> float:
    delays = [r.fields["delay"] for r in trace.of_kind("deliver")]
    if not delays:
        return 0.0
    return sum(delays) / len(delays) / US


def total_energy_nano(trace: EventTrace) -> int:
    return sum(r.fields.get("e", 0) for r in trace.of_kind(*ENERGY_KINDS))


def compute_avg_energy(trace: EventTrace, node_count: int, delivered: int) -> tuple[float, float]:
    """(mAh drawn per node, mAh drawn per delivered packet)."""
    total = total_energy_nano(trace) / NANO
    if total == 0:
        return 0.0, 0.0
    return total / max(node_count, 1), total / max(delivered, 1)


@lru_cache(maxsize=4096)
def _decode(hex_frame: str):
    return decode_message(bytes.fromhex(hex_frame))


def control_frames(trace: EventTrace) -> dict[int, object]:
    """Map transmission id to the decoded control message it carried."""
    return {r.fields["tx"]: _decode(r.fields["hex"])
            for r in trace.of_kind("tx") if "hex" in r.fields}


def is_repair_request(msg) -> bool:
    """LOAD repair floods carry the D flag; LR-ABC uses Local_RREQ."""
    return msg.kind is MessageKind.LOCAL_RREQ or (msg.kind is MessageKind.RREQ and msg.flag_d)


def repair_radius(trace: EventTrace) -> int:
    """Hop count of the farthest reception of any repair request, 0 if none."""
    frames = control_frames(trace)
    radius = 0
    for r in trace.of_kind("rx"):
        msg = frames.get(r.fields["tx"])
        if msg is not None and is_repair_request(msg):
            radius = max(radius, msg.hop_count + 1)
    return radius


def repair_counts(trace: EventTrace) -> tuple[int, int]:
    """(sessions, successful sessions) over both protocols' repair notes."""
    sessions = successes = 0
    for r in trace.of_kind("note"):
        if r.fields.get("event") == "repair_end":
            sessions += 1
            successes += bool(r.fields.get("success"))
    return sessions, successes


@dataclass(frozen=True)
class MetricsReport:
    protocol: str
    traffic: int
    seed_count: int
    pdr: float
    throughput_bps: float
    delay_s: float
    energy_total_mAh: float
    energy_per_pkt_mAh: float
    repair_radius: int
    repair_sessions: int = 0
    repair_success_ratio: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.pdr <= 1.0:
            raise ValueError(f"pdr {self.pdr} outside [0, 1]")
        if not 0.0 <= self.repair_success_ratio <= 1.0:
            raise ValueError("repair_success_ratio outside [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


def report_for(trace: EventTrace, traffic: int | None = None) -> MetricsReport:
    """Metrics of a single run."""
    meta = trace.meta
    delivered = sum(1 for _ in trace.of_kind("deliver"))
    per_node, per_pkt = compute_avg_energy(trace, meta.get("node_count", 1), delivered)
    sessions, ok = repair_counts(trace)
    sent = sum(1 for _ in trace.of_kind("app_send"))
    return MetricsReport(
        protocol=meta.get("protocol", "?"),
        traffic=sent if traffic is None else traffic,
        seed_count=1,
        pdr=compute_pdr(trace),
        throughput_bps=compute_throughput(trace, meta.get("packet_size", 0)),
        delay_s=compute_avg_delay(trace),
        energy_total_mAh=per_node,
        energy_per_pkt_mAh=per_pkt,
        repair_radius=repair_radius(trace),
        repair_sessions=sessions,
        repair_success_ratio=ok / sessions if sessions else 0.0,
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Per-cell mean over seeds; the radius is the maximum, counts are summed."""
    if not reports:
        raise ValueError("no reports to aggregate")
    n = len(reports)
    sessions = sum(r.repair_sessions for r in reports)
    ok = sum(round(r.repair_success_ratio * r.repair_sessions) for r in reports)
    return MetricsReport(
        protocol=reports[0].protocol,
        traffic=reports[0].traffic,
        seed_count=n,
        pdr=sum(r.pdr for r in reports) / n,
        throughput_bps=sum(r.throughput_bps for r in reports) / n,
        delay_s=sum(r.delay_s for r in reports) / n,
        energy_total_mAh=sum(r.energy_total_mAh for r in reports) / n,
        energy_per_pkt_mAh=sum(r.energy_per_pkt_mAh for r in reports) / n,
        repair_radius=max(r.repair_radius for r in reports),
        repair_sessions=sessions,
        repair_success_ratio=ok / sessions if sessions else 0.0,
    )
