import math

import pytest

from lrabc import Protocol, ScenarioConfig
from lrabc.experiment import (
    CSV_COLUMNS, Claim, Verdict, claims_csv, compare, summarize, from_csv, mean_pdr_gain, run_comparison_suite, run_one, to_csv,
)
from lrabc.metrics import (
    MetricsReport, compute_avg_delay, compute_avg_energy, compute_pdr, compute_throughput,
    mean_report, repair_radius, report_for, total_energy_nano,
)
from lrabc.state import US
from lrabc.trace import EventTrace


def toy_trace():
    trace = EventTrace(meta={"packet_size": 50, "node_count": 2, "protocol": "lrabc"})
    trace.add(0, 0, "battery", levels=[[1, 10**9], [2, 10**9]])
    for uid, t in ((1, 0), (2, US), (3, 2 * US)):
        trace.add(t, 1, "app_send", uid=uid, flow=0, dest=2)
    trace.add(US // 10, 2, "deliver", uid=1, delay=US // 10, path=[1, 2])
    trace.add(US + US // 5, 2, "deliver", uid=2, delay=US // 5, path=[1, 2])
    trace.add(2 * US, 1, "drop", reason="NoRoute", uid=3)
    trace.add(2 * US, 1, "tx", tx=1, kind="DATA", e=4_000_000)
    trace.add(2 * US, 2, "rx", tx=1, kind="DATA", e=2_000_000)
    return trace


class TestMetrics:
    def test_pdr(self):
        assert compute_pdr(toy_trace()) == pytest.approx(2 / 3)
        assert compute_pdr(EventTrace()) == 0.0

    def test_throughput(self):
        # 2 packets * 50 octets * 8 bits over 1.2 s
        assert compute_throughput(toy_trace(), 50) == pytest.approx(800 / 1.2)

    def test_delay(self):
        assert compute_avg_delay(toy_trace()) == pytest.approx(0.15)

    def test_energy(self):
        trace = toy_trace()
        assert total_energy_nano(trace) == 6_000_000
        per_node, per_pkt = compute_avg_energy(trace, 2, 2)
        assert (per_node, per_pkt) == pytest.approx((0.003, 0.003))

    def test_report(self):
        report = report_for(toy_trace())
        assert report.protocol == "lrabc" and report.traffic == 3 and report.repair_radius == 0

    def test_mean_report(self):
        a = MetricsReport("load", 200, 1, 1.0, 10.0, 0.1, 1.0, 0.1, 5, 2, 1.0)
        b = MetricsReport("load", 200, 1, 0.5, 20.0, 0.3, 3.0, 0.3, 7, 2, 0.5)
        m = mean_report([a, b])
        assert (m.seed_count, m.pdr, m.repair_radius, m.repair_sessions) == (2, 0.75, 7, 4)
        assert m.repair_success_ratio == 0.75

    def test_report_validation(self):
        with pytest.raises(ValueError):
            MetricsReport("load", 200, 1, 1.5, 0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            mean_report([])

    def test_repair_radius_by_protocol(self, line_traces):
        assert repair_radius(line_traces[Protocol.LOAD]) == 7
        assert repair_radius(line_traces[Protocol.LRABC]) == 2


class TestExperiment:
    def test_suite_order_and_csv(self):
        base = ScenarioConfig(traffic_total=100)
        reports = run_comparison_suite(base, ladder=(100, 200), seeds=(1,))
        assert [(r.traffic, r.protocol) for r in reports] == [
            (100, "load"), (100, "lrabc"), (200, "load"), (200, "lrabc")]
        text = to_csv(reports)
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        back = from_csv(text)
        assert [(r.protocol, r.traffic, r.repair_radius) for r in back] == \
               [(r.protocol, r.traffic, r.repair_radius) for r in reports]

    def test_parallel_equals_serial(self):
        base = ScenarioConfig(sim_duration=200.0)
        serial = to_csv(run_comparison_suite(base, ladder=(100,), seeds=(1, 2)))
        parallel = to_csv(run_comparison_suite(base, ladder=(100,), seeds=(1, 2), jobs=2))
        assert serial == parallel

    def test_disconnected_cell(self):
        [report] = run_comparison_suite(ScenarioConfig(radio_range=1.0, topology_retries=2),
                                        ladder=(100,), seeds=(1,), protocols=(Protocol.LOAD,))
        assert report.seed_count == 0 and math.isnan(report.delay_s)
        assert run_one(ScenarioConfig(radio_range=1.0, topology_retries=2)) is None
        assert "nan" in to_csv([report])

    def test_compare(self):
        ours = MetricsReport("lrabc", 300, 10, 0.9, 110.0, 0.1, 1.0, 0.01, 3)
        base = MetricsReport("load", 300, 10, 0.8, 100.0, 0.2, 1.0, 0.02, 7)
        light = MetricsReport("lrabc", 100, 10, 0.1, 1.0, 1.0, 1.0, 1.0, 3)
        [v] = compare([base, ours, light, light])
        assert v == Verdict(300, pytest.approx(10.0), True, True, True, True)
        assert v.all_better
        assert mean_pdr_gain([v]) == pytest.approx(10.0)
        assert mean_pdr_gain([]) == 0.0

    def test_summarize(self):
        rows = [MetricsReport("load", 300, 10, 0.8, 100.0, 0.2, 1.0, 0.02, 7),
                MetricsReport("lrabc", 300, 10, 0.85, 110.0, 0.3, 1.0, 0.01, 3)]
        claims = {c.name: c for c in summarize(rows)}
        assert not claims["pdr"].passed and "+5.00 pp" in claims["pdr"].detail
        assert claims["throughput"].passed and claims["energy_per_packet"].passed
        assert not claims["delay"].passed and "[300]" in claims["delay"].detail
        assert claims["repair_radius"] == Claim("repair_radius", True, "max radius lrabc 3 vs load 7")
        assert claims_csv([claims["throughput"]]) == \
            "claim,verdict,detail\nthroughput,pass,holds at every point\n"
        assert summarize([]) == []
