"""Battery accounting and the closed-form repair-energy model.

Charges are kept as integer nano-mAh so that the sum of per-event costs in a
trace equals the total drawn from all batteries exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from .wire import AEL_MAX, AEL_SCALE

NANO = 10**9  # nano-mAh per mAh


def to_nano(mah) -> int:
    return int(round(Fraction(str(mah)) * NANO))


class Depleted(Exception):
    pass


class ChargeKind(enum.Enum):
    TX_CTL = "tx_ctl"
    RX_CTL = "rx_ctl"
    TX_REP = "tx_rep"
    RX_REP = "rx_rep"
    TX_DATA = "tx_data"
    RX_DATA = "rx_data"
    IDLE = "idle"


@dataclass(frozen=True)
class EnergyCosts:
    """Per-operation charge in mAh.

    ``e_lrreq_*`` applies to request floods (RREQ and Local_RREQ),
    ``e_lrrep_*`` to unicast control (RREP, Local_RREP, RERR).
    """

    e_lrreq_t: float = 0.002
    e_lrreq_r: float = 0.001
    e_lrrep_t: float = 0.002
    e_lrrep_r: float = 0.001
    e_data_t: float = 0.004
    e_data_r: float = 0.002
    e_idle_per_s: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")

    def nano(self, kind: ChargeKind) -> int:
        return {
            ChargeKind.TX_CTL: to_nano(self.e_lrreq_t),
            ChargeKind.RX_CTL: to_nano(self.e_lrreq_r),
            ChargeKind.TX_REP: to_nano(self.e_lrrep_t),
            ChargeKind.RX_REP: to_nano(self.e_lrrep_r),
            ChargeKind.TX_DATA: to_nano(self.e_data_t),
            ChargeKind.RX_DATA: to_nano(self.e_data_r),
        }[kind]

    def table(self) -> dict[ChargeKind, int]:
        return {k: self.nano(k) for k in ChargeKind if k is not ChargeKind.IDLE}

    def idle_nano(self, duration_us: int) -> int:
        return int(to_nano(self.e_idle_per_s) * duration_us // 1_000_000)


@dataclass
class Battery:
    capacity: int  # nano-mAh
    remaining: int

    def __post_init__(self):
        if not 0 <= self.remaining <= self.capacity:
            raise ValueError("remaining must lie in [0, capacity]")

    @classmethod
    def from_mah(cls, capacity: float, remaining: float | None = None) -> Battery:
        cap = to_nano(capacity)
        return cls(cap, cap if remaining is None else to_nano(remaining))

    @property
    def remaining_mah(self) -> float:
        return self.remaining / NANO

    @property
    def el(self) -> int:
        """Residual energy level in AEL fixed-point units."""
        return min(AEL_MAX, self.remaining * AEL_SCALE // NANO)


def charge(battery: Battery, kind: ChargeKind, costs: EnergyCosts, amount: int = 1) -> int:
    """Draw ``amount`` operations of ``kind`` (for IDLE: microseconds).

    Returns the nano-mAh drawn. Raises Depleted, leaving the battery at 0,
    when the cost exceeds what is left.
    """
    if kind is ChargeKind.IDLE:
        cost = costs.idle_nano(amount)
    else:
        cost = costs.nano(kind) * amount
    if cost > battery.remaining:
        left, battery.remaining = battery.remaining, 0
        raise Depleted(f"{kind.value} needs {cost}, {left} left")
    battery.remaining -= cost
    return cost


class Variant(enum.Enum):
    LOAD = "load"
    LRABC = "lrabc"


def analytic_repair_energy(variant: Variant, nd, m, h, costs: EnergyCosts) -> Fraction:
    """Request flood over ``nd`` nodes, each heard by ``m`` forwarders on
    average, plus a reply relayed over ``h`` hops.

    For LOAD ``h`` is the upstream-to-destination distance, for LR-ABC the
    upstream-to-second-next-hop distance; the expression is the same.
    """
    if min(nd, m, h) < 0:
        raise ValueError("nd, m and h must be non-negative")
    f = lambda x: Fraction(str(x))  # noqa: E731
    nd, m, h = f(nd), f(m), f(h)
    flood = nd * (f(costs.e_lrreq_t) + m * f(costs.e_lrreq_r))
    reply = h * (f(costs.e_lrrep_t) + f(costs.e_lrrep_r))
    return flood + reply


@dataclass(frozen=True)
class RepairParams:
    nd: int
    h: int


def repair_energy_ratios(load: RepairParams, lrabc: RepairParams) -> tuple[Fraction, Fraction]:
    if load.nd <= 0 or load.h <= 0:
        raise ZeroDivisionError("LOAD nd and h must be positive")
    return Fraction(lrabc.nd, load.nd), Fraction(lrabc.h, load.h)
