"""Node placement and the unit-disk neighbour graph."""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

from .config import CbrFlow, ScenarioConfig


class DisconnectedTopology(RuntimeError):
    pass


@dataclass
class Topology:
    positions: dict[int, tuple[float, float]]
    neighbors: dict[int, frozenset[int]]
    weak: frozenset[frozenset[int]]  # weak edges as unordered pairs

    @property
    def nodes(self) -> list[int]:
        return sorted(self.neighbors)

    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u in self.neighbors for v in self.neighbors[u] if u < v)

    def is_weak(self, u: int, v: int) -> bool:
        return frozenset((u, v)) in self.weak

    def hop_distances(self, source: int, dead: frozenset[int] | set[int] = frozenset()) -> dict[int, int]:
        """BFS distances from ``source`` over live nodes."""
        if source in dead:
            return {}
        dist = {source: 0}
        todo = deque([source])
        while todo:
            u = todo.popleft()
            for v in sorted(self.neighbors[u]):
                if v not in dist and v not in dead:
                    dist[v] = dist[u] + 1
                    todo.append(v)
        return dist

    def component(self, node: int) -> set[int]:
        return set(self.hop_distances(node))

    def largest_component(self) -> set[int]:
        best: set[int] = set()
        seen: set[int] = set()
        for n in self.nodes:
            if n not in seen:
                comp = self.component(n)
                seen |= comp
                if len(comp) > len(best):
                    best = comp
        return best


def _tag_weak(rng: random.Random, edges: list[tuple[int, int]], fraction: float) -> frozenset:
    return frozenset(frozenset(e) for e in edges if rng.random() < fraction)


def _from_edges(config: ScenarioConfig) -> Topology:
    nbrs: dict[int, set[int]] = {n: set() for n in range(1, config.node_count + 1)}
    for u, v in config.edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    weak = frozenset(frozenset(e) for e in config.weak_edges)
    return Topology({}, {n: frozenset(s) for n, s in nbrs.items()}, weak)


def _place(config: ScenarioConfig, rng: random.Random) -> Topology:
    width, height = config.area
    pos = {n: (rng.uniform(0, width), rng.uniform(0, height))
           for n in range(1, config.node_count + 1)}
    nbrs: dict[int, set[int]] = {n: set() for n in pos}
    edges = []
    for u in pos:
        for v in pos:
            if u < v and math.dist(pos[u], pos[v]) <= config.radio_range:
                nbrs[u].add(v)
                nbrs[v].add(u)
                edges.append((u, v))
    weak = _tag_weak(rng, edges, config.mac.weak_link_fraction)
    return Topology(pos, {n: frozenset(s) for n, s in nbrs.items()}, weak)


def _endpoints_connected(topo: Topology, flows) -> bool:
    if not flows:
        return True
    comp = topo.component(flows[0].src)
    return all(f.src in comp and f.dest in comp for f in flows)


def _auto_flows_possible(topo: Topology, config: ScenarioConfig) -> bool:
    # the auto-flow planner needs a sizeable component with long enough pairs
    comp = topo.largest_component()
    return len(comp) >= max(2 * config.flow_count, config.node_count // 2)


def build_topology(config: ScenarioConfig) -> Topology:
    """Explicit ``edges`` win; otherwise place nodes uniformly with the
    seeded generator and retry until the flow endpoints share a component."""
    if config.edges:
        topo = _from_edges(config)
        if not _endpoints_connected(topo, config.cbr_flows):
            raise DisconnectedTopology("flow endpoints are not connected")
        return topo
    rng = random.Random(f"{config.seed}:topology")
    for _ in range(config.topology_retries):
        topo = _place(config, rng)
        if config.cbr_flows:
            if _endpoints_connected(topo, config.cbr_flows):
                return topo
        elif config.flow_count == 0 or _auto_flows_possible(topo, config):
            return topo
    raise DisconnectedTopology(f"no usable topology after {config.topology_retries} placements")


def plan_flows(config: ScenarioConfig, topo: Topology) -> list[tuple[CbrFlow, int]]:
    """Return (flow, packet count) pairs.

    Without explicit flows, ``flow_count`` source/destination pairs at least
    ``flow_min_hops`` apart are drawn from the largest component; the
    traffic total is split evenly and sent at a constant rate across the
    remaining run time.
    """
    flows = list(config.cbr_flows)
    if not flows and config.flow_count > 0:
        rng = random.Random(f"{config.seed}:flows")
        comp = sorted(topo.largest_component())
        used: set[int] = set()
        span = config.sim_duration - config.flow_start - 20.0
        per_flow = max(1, config.traffic_total // config.flow_count)
        interval = max(span, 1.0) / per_flow
        for i in range(config.flow_count):
            for _ in range(1000):
                src, dest = rng.sample(comp, 2)
                if src in used or dest in used:
                    continue
                if topo.hop_distances(src).get(dest, 0) >= config.flow_min_hops:
                    break
            else:
                raise DisconnectedTopology("no endpoint pair far enough apart")
            used |= {src, dest}
            start = config.flow_start + rng.uniform(0, interval)
            flows.append(CbrFlow(src, dest, round(start, 6), round(interval, 6)))
    counts = _split_counts(config, flows)
    return list(zip(flows, counts))


def _split_counts(config: ScenarioConfig, flows: list[CbrFlow]) -> list[int]:
    implicit = [f for f in flows if f.count is None]
    explicit_total = sum(f.count for f in flows if f.count is not None)
    left = max(0, config.traffic_total - explicit_total)
    counts = []
    k = 0
    for f in flows:
        if f.count is not None:
            counts.append(f.count)
        else:
            share = left // len(implicit) + (1 if k < left % len(implicit) else 0)
            counts.append(share)
            k += 1
    return counts
