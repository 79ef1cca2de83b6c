"""Scenario configuration and its flat ``key = value`` text form.

Every knob that shapes a run lives here so that a run is a pure function of
one ScenarioConfig. Times in the text form are seconds, energies mAh.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace

from .energy import EnergyCosts
from .state import US, Protocol, ProtocolParams


class ConfigError(ValueError):
    pass


def seconds_to_us(value: float) -> int:
    return int(round(float(value) * US))


@dataclass(frozen=True)
class MacParams:
    per_hop_delay: float = 0.02  # seconds per frame on an idle channel
    retry_limit: int = 3
    contention_factor: float = 0.5
    weak_link_fraction: float = 0.2
    loss_per_contender: float = 0.03
    loss_cap: float = 0.5
    weak_link_loss: float = 0.1
    jitter: float = 0.5  # broadcast jitter, fraction of per_hop_delay

    def __post_init__(self):
        if self.per_hop_delay <= 0:
            raise ConfigError("per_hop_delay must be positive")
        if self.retry_limit < 0:
            raise ConfigError("retry_limit must be >= 0")
        for name in ("weak_link_fraction", "loss_per_contender", "loss_cap", "weak_link_loss"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.contention_factor < 0 or self.jitter < 0:
            raise ConfigError("contention_factor and jitter must be >= 0")

    @property
    def per_hop_us(self) -> int:
        return seconds_to_us(self.per_hop_delay)


@dataclass(frozen=True)
class CbrFlow:
    src: int
    dest: int
    start: float
    interval: float
    count: int | None = None  # None: share of traffic_total

    def __post_init__(self):
        if self.src == self.dest:
            raise ConfigError("flow endpoints must differ")
        if self.interval <= 0 or self.start < 0:
            raise ConfigError("flow start must be >= 0 and interval > 0")


@dataclass(frozen=True)
class Failure:
    """Kill ``node`` at ``time``; node None picks a relay of a live flow route
    at fire time (``position`` 'mid' or 'first')."""

    time: float
    node: int | None = None
    position: str = "mid"

    def __post_init__(self):
        if self.position not in ("mid", "first"):
            raise ConfigError("failure position must be 'mid' or 'first'")


@dataclass(frozen=True)
class ScenarioConfig:
    area: tuple[float, float] = (1500.0, 1500.0)
    node_count: int = 50
    radio_range: float = 250.0
    sim_duration: float = 1020.0
    packet_size: int = 50
    traffic_total: int = 600
    flow_count: int = 5
    flow_start: float = 10.0
    flow_min_hops: int = 3
    cbr_flows: tuple[CbrFlow, ...] = ()
    failures: tuple[Failure, ...] = ()
    auto_failures: int = 5
    seed: int = 1
    protocol: Protocol = Protocol.LRABC
    energy: EnergyCosts = field(default_factory=EnergyCosts)
    mac: MacParams = field(default_factory=MacParams)
    battery_capacity: float = 100.0
    battery_min_fraction: float = 0.5
    battery_levels: tuple[tuple[int, float], ...] = ()  # explicit (node, mAh)
    edges: tuple[tuple[int, int], ...] = ()  # explicit topology instead of placement
    weak_edges: tuple[tuple[int, int], ...] = ()
    topology_retries: int = 100
    hop_limit: int = 31
    route_lifetime: float = 30.0
    local_ttl: int = 3
    trial_limit: int = 2
    local_copy_limit: int | None = 1  # None relays every loop-free copy
    rerr_rate: int = 1
    repair_window: float | None = None
    snh_window: float | None = None
    load_deadline: float | None = None

    def __post_init__(self):
        if self.node_count < 2:
            raise ConfigError("node_count must be >= 2")
        for name in ("traffic_total", "flow_count", "auto_failures", "packet_size", "hop_limit"):
            if getattr(self, name) < (1 if name in ("packet_size", "hop_limit") else 0):
                raise ConfigError(f"{name} out of range: {getattr(self, name)}")
        if self.radio_range <= 0:
            raise ConfigError("radio_range must be positive")
        if self.sim_duration <= 0:
            raise ConfigError("sim_duration must be positive")
        for failure in self.failures:
            if not 0 <= failure.time <= self.sim_duration:
                raise ConfigError(f"failure at {failure.time}s lies outside the run")
            if failure.node is not None and not 1 <= failure.node <= self.node_count:
                raise ConfigError(f"unknown node {failure.node}")
        for flow in self.cbr_flows:
            for addr in (flow.src, flow.dest):
                if not 1 <= addr <= self.node_count:
                    raise ConfigError(f"unknown node {addr}")
        for u, v in self.edges + self.weak_edges:
            if not (1 <= u <= self.node_count and 1 <= v <= self.node_count) or u == v:
                raise ConfigError(f"bad edge {u}-{v}")
        if not 0 < self.battery_min_fraction <= 1:
            raise ConfigError("battery_min_fraction must lie in (0, 1]")
        if self.local_copy_limit is not None and self.local_copy_limit < 1:
            raise ConfigError("local_copy_limit must be >= 1 or None")
        if self.local_ttl < 1 or self.trial_limit < 1:
            raise ConfigError("local_ttl and trial_limit must be >= 1")

    @property
    def duration_us(self) -> int:
        return seconds_to_us(self.sim_duration)

    def protocol_params(self) -> ProtocolParams:
        opt = lambda v: None if v is None else seconds_to_us(v)  # noqa: E731
        return ProtocolParams(
            per_hop_delay_us=self.mac.per_hop_us, hop_limit=self.hop_limit,
            route_lifetime_us=seconds_to_us(self.route_lifetime), local_ttl=self.local_ttl,
            trial_limit=self.trial_limit, local_copy_limit=self.local_copy_limit,
            rerr_rate=self.rerr_rate,
            repair_window_us=opt(self.repair_window), snh_window_us=opt(self.snh_window),
            load_deadline_us=opt(self.load_deadline),
        )

    def with_(self, **changes) -> ScenarioConfig:
        return replace(self, **changes)


# text form -------------------------------------------------------------------

_NESTED = {"energy": EnergyCosts, "mac": MacParams}
_OPTIONAL_INT = {"local_copy_limit"}


def _pairs(text: str, sep: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in _items(text):
        a, b = item.split(sep)
        out.append((int(a), int(b)))
    return tuple(out)


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_flows(text: str) -> tuple[CbrFlow, ...]:
    # src:dest:start:interval[:count]
    flows = []
    for item in _items(text):
        parts = item.split(":")
        if len(parts) not in (4, 5):
            raise ConfigError(f"bad flow {item!r}")
        count = int(parts[4]) if len(parts) == 5 else None
        flows.append(CbrFlow(int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]), count))
    return tuple(flows)


def _parse_failures(text: str) -> tuple[Failure, ...]:
    # node@time, or auto@time / first@time for route-relative picks
    out = []
    for item in _items(text):
        who, _, when = item.partition("@")
        if who == "auto":
            out.append(Failure(float(when)))
        elif who == "first":
            out.append(Failure(float(when), position="first"))
        else:
            out.append(Failure(float(when), int(who)))
    return tuple(out)


def _parse_levels(text: str) -> tuple[tuple[int, float], ...]:
    out = []
    for item in _items(text):
        node, level = item.split(":")
        out.append((int(node), float(level)))
    return tuple(out)


def _coerce(name: str, raw: str, current):
    if name == "area":
        w, _, h = raw.lower().partition("x")
        return (float(w), float(h or w))
    if name == "cbr_flows":
        return _parse_flows(raw)
    if name == "failures":
        return _parse_failures(raw)
    if name in ("edges", "weak_edges"):
        return _pairs(raw, "-")
    if name == "battery_levels":
        return _parse_levels(raw)
    if name == "protocol":
        return Protocol(raw.lower())
    if raw.lower() == "none":
        return None
    if name in _OPTIONAL_INT:
        return int(raw)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    return float(raw)


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Read ``key = value`` lines; ``mac.retry_limit`` style keys reach nested groups."""
    base = base or ScenarioConfig()
    top: dict = {}
    nested: dict[str, dict] = {k: {} for k in _NESTED}
    names = {f.name for f in fields(ScenarioConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        group, dot, sub = key.partition(".")
        try:
            if dot and group in _NESTED:
                current = getattr(getattr(base, group), sub)
                nested[group][sub] = _coerce(sub, raw, current)
            elif key in names:
                top[key] = _coerce(key, raw, getattr(base, key))
            else:
                raise ConfigError(f"unknown key {key!r}")
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    for group, values in nested.items():
        if values:
            top[group] = replace(getattr(base, group), **values)
    return replace(base, **top)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format(value) -> str:
    if value == ():
        return ""
    if isinstance(value, tuple) and value and isinstance(value[0], CbrFlow):
        return ", ".join(
            f"{f.src}:{f.dest}:{f.start}:{f.interval}" + (f":{f.count}" if f.count is not None else "")
            for f in value)
    if isinstance(value, tuple) and value and isinstance(value[0], Failure):
        return ", ".join(
            f"{f.node if f.node is not None else ('auto' if f.position == 'mid' else 'first')}@{f.time}"
            for f in value)
    if isinstance(value, Protocol):
        return value.value
    return str(value)


def dump_config(config: ScenarioConfig) -> str:
    """Canonical text form; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                lines.append(f"{f.name}.{sub.name} = {getattr(value, sub.name)}")
        elif f.name == "area":
            lines.append(f"area = {value[0]}x{value[1]}")
        elif f.name in ("edges", "weak_edges"):
            lines.append(f"{f.name} = " + ", ".join(f"{u}-{v}" for u, v in value))
        elif f.name == "battery_levels":
            lines.append(f"{f.name} = " + ", ".join(f"{n}:{lv}" for n, lv in value))
        else:
            lines.append(f"{f.name} = {_format(value)}")
    return "\n".join(lines) + "\n"
