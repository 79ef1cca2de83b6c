import pytest

from lrabc import Protocol, ScenarioConfig, run
from lrabc.energy import Battery
from lrabc.scenarios import line_with_bypass
from lrabc.state import NodeState, ProtocolParams


def make_node(address, neighbors=(), *, mah=100.0, protocol=Protocol.LRABC, weak=(), **params):
    return NodeState(
        address=address, neighbors=frozenset(neighbors), battery=Battery.from_mah(200.0, mah),
        params=ProtocolParams(**params), protocol=protocol, weak_neighbors=frozenset(weak),
    )


def kinds(actions):
    return [type(a).__name__ for a in actions]


@pytest.fixture(scope="session")
def line_traces():
    return {p: run(line_with_bypass(p)) for p in Protocol}


@pytest.fixture(scope="session")
def default_traces():
    """Default 50-node scenario, both protocols, three seeds."""
    return {(p, s): run(ScenarioConfig(seed=s, protocol=p)) for p in Protocol for s in (1, 2, 3)}
