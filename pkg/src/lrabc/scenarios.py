"""Small hand-built scenarios used by the acceptance suite and the CLI."""

from __future__ import annotations

from .config import CbrFlow, Failure, MacParams, ScenarioConfig
from .state import Protocol

LOSSLESS = MacParams(loss_per_contender=0.0, weak_link_loss=0.0, weak_link_fraction=0.0)


def line_with_bypass(protocol: Protocol = Protocol.LRABC, *, fail_at: float = 20.0,
                     packets: int = 20) -> ScenarioConfig:
    """Eight nodes in a line (1..8) with node 9 adjacent to 1 and 3.

    The flow runs 1 -> 8 and node 2, the source's next hop, dies at
    ``fail_at``. The 9-3 edge is weak so that discovery prefers the line;
    after the failure the only way on is the detour 1-9-3, two hops from
    the upstream node, while the destination stays seven hops away.
    """
    edges = tuple((n, n + 1) for n in range(1, 8)) + ((1, 9), (9, 3))
    return ScenarioConfig(
        node_count=9, edges=edges, weak_edges=((9, 3),), mac=LOSSLESS,
        cbr_flows=(CbrFlow(1, 8, 10.0, 1.0, packets),), traffic_total=packets,
        failures=(Failure(fail_at, 2),), auto_failures=0, flow_count=0,
        sim_duration=10.0 + packets + 10.0, protocol=protocol, seed=1,
    )
