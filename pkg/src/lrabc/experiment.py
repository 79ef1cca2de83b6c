"""Seeded comparison sweeps of both protocols over a traffic ladder.

Every (protocol, traffic, seed) run is independent and deterministic, so the
sweep can fan out over worker processes and still fold into the same CSV
byte for byte: results are gathered by key and written in ladder order.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from .checks import check_trace
from .config import ScenarioConfig
from .engine import run
from .metrics import MetricsReport, mean_report, report_for
from .state import Protocol
from .topology import DisconnectedTopology

DEFAULT_LADDER = tuple(range(200, 1201, 100))
DEFAULT_SEEDS = tuple(range(1, 11))
CSV_COLUMNS = ("protocol", "traffic", "seed_count", "pdr", "throughput_bps", "delay_s",
               "energy_total_mAh", "energy_per_pkt_mAh", "repair_radius")
# the lightest load hardly exercises repair; comparisons start above it
EXCLUDED_TRAFFIC = frozenset({100})


def run_one(config: ScenarioConfig) -> MetricsReport | None:
    """Metrics of one seeded run, or None if no usable topology exists."""
    return _run_cell((config, False, None))[0]


def trace_name(config: ScenarioConfig) -> str:
    return f"{config.protocol.value}-t{config.traffic_total}-s{config.seed}.ndjson"


def _run_cell(job) -> tuple[MetricsReport | None, list[str]]:
    config, validate, trace_dir = job
    try:
        trace = run(config)
    except DisconnectedTopology:
        return None, []
    if trace_dir is not None:
        trace.write(Path(trace_dir) / trace_name(config))
    violations = [str(v) for v in check_trace(trace)] if validate else []
    return report_for(trace, traffic=config.traffic_total), violations


def _empty(protocol: Protocol, traffic: int) -> MetricsReport:
    nan = math.nan
    return MetricsReport(protocol.value, traffic, 0, 0.0, nan, nan, nan, nan, 0)


def run_comparison_suite(base: ScenarioConfig, ladder=DEFAULT_LADDER, seeds=DEFAULT_SEEDS,
                         protocols=tuple(Protocol), jobs: int = 1, *,
                         violations: dict | None = None,
                         trace_dir=None) -> list[MetricsReport]:
    """One seed-averaged report per (traffic, protocol), in that order.

    Seeds whose topology cannot be built are left out of the mean; a cell
    with no usable seed is reported with seed_count 0 and NaN metrics. When
    ``violations`` is given, every trace is run through the invariant checks
    and the findings are stored under (protocol, traffic, seed). Traces are
    written to ``trace_dir`` when it is set.
    """
    keys = [(t, p, s) for t in ladder for p in protocols for s in seeds]
    jobs_in = [(base.with_(traffic_total=t, protocol=p, seed=s), violations is not None, trace_dir)
               for t, p, s in keys]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, jobs_in, chunksize=4))
    else:
        results = [_run_cell(j) for j in jobs_in]
    by_cell: dict[tuple, list[MetricsReport]] = {}
    for (t, p, s), (report, found) in zip(keys, results):
        cell = by_cell.setdefault((t, p), [])
        if report is not None:
            cell.append(report)
        if violations is not None:
            violations[(p.value, t, s)] = found
    return [mean_report(rs) if rs else _empty(p, t) for (t, p), rs in by_cell.items()]


def _cell(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    return str(value)


def to_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        row = r.as_dict()
        writer.writerow(_cell(row[c]) for c in CSV_COLUMNS)
    return buf.getvalue()


def from_csv(text: str) -> list[MetricsReport]:
    types = {f.name: f.type for f in fields(MetricsReport)}
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        values = {k: (int(v) if types[k] == "int" else v if types[k] == "str" else float(v))
                  for k, v in row.items()}
        out.append(MetricsReport(**values))
    return out


@dataclass(frozen=True)
class Verdict:
    traffic: int
    pdr_gain_pp: float  # percentage points, LR-ABC minus LOAD
    pdr_higher: bool
    throughput_higher: bool
    delay_lower: bool
    energy_lower: bool

    @property
    def all_better(self) -> bool:
        return self.pdr_higher and self.throughput_higher and self.delay_lower and self.energy_lower


def compare(reports: list[MetricsReport]) -> list[Verdict]:
    """Pair the two protocols at each traffic level the ladder shares."""
    cells = {(r.protocol, r.traffic): r for r in reports}
    verdicts = []
    for traffic in sorted({r.traffic for r in reports} - EXCLUDED_TRAFFIC):
        ours = cells.get((Protocol.LRABC.value, traffic))
        base = cells.get((Protocol.LOAD.value, traffic))
        if ours is None or base is None:
            continue
        verdicts.append(Verdict(
            traffic=traffic,
            pdr_gain_pp=100.0 * (ours.pdr - base.pdr),
            pdr_higher=ours.pdr > base.pdr,
            throughput_higher=ours.throughput_bps > base.throughput_bps,
            delay_lower=ours.delay_s < base.delay_s,
            energy_lower=ours.energy_per_pkt_mAh < base.energy_per_pkt_mAh,
        ))
    return verdicts


def mean_pdr_gain(verdicts: list[Verdict]) -> float:
    return sum(v.pdr_gain_pp for v in verdicts) / len(verdicts) if verdicts else 0.0


@dataclass(frozen=True)
class Claim:
    """One trend verdict of the comparison summary."""
    name: str
    passed: bool
    detail: str


MIN_PDR_GAIN_PP = 10.0


def summarize(reports: list[MetricsReport]) -> list[Claim]:
    """Trend verdicts and the repair-radius comparison, from the CSV rows alone."""
    verdicts = compare(reports)
    if not verdicts:
        return []

    def every(attr: str) -> tuple[bool, str]:
        misses = [v.traffic for v in verdicts if not getattr(v, attr)]
        return not misses, f"fails at traffic {misses}" if misses else "holds at every point"

    gain = mean_pdr_gain(verdicts)
    pdr_ok, pdr_detail = every("pdr_higher")
    claims = [Claim("pdr", pdr_ok and gain >= MIN_PDR_GAIN_PP,
                    f"{pdr_detail}; mean gain {gain:+.2f} pp (want >= {MIN_PDR_GAIN_PP:g})")]
    for name, attr in (("throughput", "throughput_higher"), ("delay", "delay_lower"),
                       ("energy_per_packet", "energy_lower")):
        claims.append(Claim(name, *every(attr)))
    radius = {p.value: max((r.repair_radius for r in reports if r.protocol == p.value), default=0)
              for p in Protocol}
    claims.append(Claim("repair_radius", radius["lrabc"] < radius["load"],
                        f"max radius lrabc {radius['lrabc']} vs load {radius['load']}"))
    return claims


def claims_csv(claims: list[Claim]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("claim", "verdict", "detail"))
    for c in claims:
        writer.writerow((c.name, "pass" if c.passed else "fail", c.detail))
    return buf.getvalue()
