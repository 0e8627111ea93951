"""Road-graph MDP with AoI-confidence rewards.

States are intersections, actions are outgoing road segments, transitions are
deterministic.  Traversing a segment earns the AoI confidence simulated over
the traversal time with the segment's regional latency distributions; a route
is scored by the product of its per-segment rewards.  Rewards are frozen
(estimated once with a fixed seed) so the decision process is stationary and
a brute-force path enumeration is an exact optimum oracle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .aoi import SimulationSettings, simulate_confidence
from .rngutil import substream
from .segmentation import RegionMap

__all__ = [
    "Node",
    "Edge",
    "RoadGraph",
    "RouteState",
    "EpisodeResult",
    "RewardParams",
    "RouteEnv",
    "transition",
    "path_utility",
    "segment_reward",
    "edge_confidence_rewards",
    "resolve_edge_rewards",
    "build_route_env",
    "rollout",
    "greedy_policy",
    "random_policy",
    "brute_force_optimal",
    "OracleResult",
    "R_FLOOR",
]

R_FLOOR = 1e-6


@dataclass(frozen=True)
class Node:
    id: str
    cell: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    length_m: float
    speed_mps: float
    region: int
    server: Optional[str] = None  # per-edge override, None -> planner default

    def traversal_ms(self) -> float:
        return 1000.0 * self.length_m / self.speed_mps


@dataclass(frozen=True)
class RoadGraph:
    nodes: tuple
    edges: tuple
    source: str
    destination: str
    _index: dict = field(init=False, repr=False)
    _out: tuple = field(init=False, repr=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        index = {nid: i for i, nid in enumerate(ids)}
        for e in edges:
            if e.tail not in index or e.head not in index:
                raise ValueError(f"edge endpoint not in graph: {e.tail}->{e.head}")
            if e.length_m <= 0 or e.speed_mps <= 0:
                raise ValueError("edge length and speed must be positive")
        for endpoint in (self.source, self.destination):
            if endpoint not in index:
                raise ValueError(f"unknown endpoint: {endpoint}")
        out: list[list[int]] = [[] for _ in nodes]
        for ei, e in enumerate(edges):
            out[index[e.tail]].append(ei)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_out", tuple(tuple(o) for o in out))
        if not self._reachable(self.source, self.destination):
            raise ValueError("unreachable destination")

    def _reachable(self, a: str, b: str) -> bool:
        seen = {a}
        queue = deque([a])
        while queue:
            u = queue.popleft()
            if u == b:
                return True
            for ei in self.out_edges(u):
                v = self.edges[ei].head
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return False

    def out_edges(self, node_id: str) -> tuple:
        return self._out[self._index[node_id]]

    def out_degree(self, node_id: str) -> int:
        return len(self._out[self._index[node_id]])

    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def edge_between(self, tail: str, head: str) -> int:
        for ei in self.out_edges(tail):
            if self.edges[ei].head == head:
                return ei
        raise ValueError(f"no edge {tail}->{head}")

    @property
    def max_out_degree(self) -> int:
        return max((len(o) for o in self._out), default=0)

    def to_json_dict(self) -> dict:
        edges = []
        for e in self.edges:
            doc = {
                "from": e.tail,
                "to": e.head,
                "length_m": e.length_m,
                "speed_mps": e.speed_mps,
                "region": e.region,
            }
            if e.server is not None:
                doc["server"] = e.server
            edges.append(doc)
        return {
            "nodes": [
                {"id": n.id, "cell": list(n.cell) if n.cell is not None else None}
                for n in self.nodes
            ],
            "edges": edges,
            "source": self.source,
            "destination": self.destination,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "RoadGraph":
        nodes = tuple(
            Node(id=n["id"], cell=tuple(n["cell"]) if n.get("cell") else None)
            for n in doc["nodes"]
        )
        edges = tuple(
            Edge(
                tail=e["from"],
                head=e["to"],
                length_m=e["length_m"],
                speed_mps=e["speed_mps"],
                region=e["region"],
                server=e.get("server"),
            )
            for e in doc["edges"]
        )
        return RoadGraph(nodes, edges, doc["source"], doc["destination"])


@dataclass(frozen=True)
class RouteState:
    node: str
    step: int = 0


def transition(graph: RoadGraph, state: RouteState, action: int) -> RouteState:
    """Deterministic successor: head of the chosen outgoing edge."""
    out = graph.out_edges(state.node)
    if not 0 <= action < len(out):
        raise ValueError("illegal action")
    return RouteState(node=graph.edges[out[action]].head, step=state.step + 1)


def path_utility(rewards: Sequence[float]) -> float:
    """Product of per-segment rewards, folded from the final segment.

    The fold order matches the backward Bellman accumulation, so utilities
    computed here are bitwise comparable with value-iteration fixed points.
    """
    acc = 1.0
    for r in reversed(list(rewards)):
        acc = float(r) * acc
    return acc


@dataclass(frozen=True)
class EpisodeResult:
    nodes: tuple
    rewards: tuple
    utility: float
    reached: bool
    truncated: bool


@dataclass(frozen=True)
class RewardParams:
    """AoI parameters for per-segment confidence rewards."""

    gen_interval_ms: float = 20.0
    tau_fog_ms: float = 0.0
    tau_cloud_ms: float = 0.0
    a_max_ms: float = 50.0
    replications: int = 16
    warmup_ms: Optional[float] = None
    r_floor: float = R_FLOOR


def _edge_seed(seed: int, edge_idx: int, server: str) -> int:
    gen = substream(seed, "edge", edge_idx, 0 if server == "fog" else 1)
    return int(gen.integers(0, 2**62))


def segment_reward(
    graph: RoadGraph,
    edge_idx: int,
    region_map: RegionMap,
    params: RewardParams,
    server: str,
    seed: int,
    threads: int = 1,
) -> float:
    """AoI confidence earned by traversing one edge with the given server.

    The horizon is the edge traversal time; latencies come from the edge
    region's cluster distributions.  The result is clamped to
    [r_floor, 1] so route products never collapse to exact zero.
    """
    edge = graph.edges[edge_idx]
    if edge.region not in region_map.labels:
        raise ValueError("uncovered region")
    info = region_map.cluster(edge.region)
    settings = SimulationSettings(
        server=server,
        gen_interval_ms=params.gen_interval_ms,
        tau_fog_ms=params.tau_fog_ms,
        tau_cloud_ms=params.tau_cloud_ms,
        a_max_ms=params.a_max_ms,
        horizon_ms=edge.traversal_ms(),
        warmup_ms=params.warmup_ms,
        replications=params.replications,
        seed=_edge_seed(seed, edge_idx, server),
        threads=threads,
    )
    est = simulate_confidence(info.fog, info.cloud, settings)
    return float(min(max(est.mean, params.r_floor), 1.0))


def edge_confidence_rewards(
    graph: RoadGraph,
    region_map: RegionMap,
    params: RewardParams,
    seed: int,
    threads: int = 1,
) -> np.ndarray:
    """Frozen reward table, shape (n_edges, 2): columns (fog, cloud)."""
    table = np.empty((len(graph.edges), 2))
    for ei in range(len(graph.edges)):
        table[ei, 0] = segment_reward(graph, ei, region_map, params, "fog", seed, threads)
        table[ei, 1] = segment_reward(graph, ei, region_map, params, "cloud", seed, threads)
    return table


def resolve_edge_rewards(
    graph: RoadGraph, table: np.ndarray, default_server: str = "fog"
) -> np.ndarray:
    """Pick each edge's effective reward: its override server or the default."""
    out = np.empty(len(graph.edges))
    for ei, e in enumerate(graph.edges):
        server = e.server or default_server
        out[ei] = table[ei, 0 if server == "fog" else 1]
    return out


class RouteEnv:
    """The planning environment: frozen per-edge rewards on a road graph."""

    def __init__(self, graph: RoadGraph, edge_rewards: Sequence[float]):
        rewards = np.asarray(edge_rewards, dtype=float)
        if rewards.shape != (len(graph.edges),):
            raise ValueError("one reward per edge required")
        if np.any(rewards <= 0) or np.any(rewards > 1):
            raise ValueError("rewards must lie in (0, 1]")
        self.graph = graph
        self.edge_rewards = rewards

    @property
    def source(self) -> str:
        return self.graph.source

    @property
    def destination(self) -> str:
        return self.graph.destination

    def n_actions(self, node: str) -> int:
        return self.graph.out_degree(node)

    def reset(self) -> RouteState:
        return RouteState(node=self.graph.source, step=0)

    def step(self, state: RouteState, action: int):
        """Returns (next_state, reward, terminal)."""
        out = self.graph.out_edges(state.node)
        if not 0 <= action < len(out):
            raise ValueError("illegal action")
        edge_idx = out[action]
        nxt = RouteState(node=self.graph.edges[edge_idx].head, step=state.step + 1)
        return nxt, float(self.edge_rewards[edge_idx]), nxt.node == self.destination


def build_route_env(
    graph: RoadGraph,
    region_map: RegionMap,
    params: RewardParams,
    seed: int,
    default_server: str = "fog",
    threads: int = 1,
) -> RouteEnv:
    table = edge_confidence_rewards(graph, region_map, params, seed, threads)
    return RouteEnv(graph, resolve_edge_rewards(graph, table, default_server))


def rollout(env: RouteEnv, policy: Callable, max_steps: int = 1000) -> EpisodeResult:
    """Follow a policy from source until destination or truncation."""
    state = env.reset()
    nodes = [state.node]
    rewards: list[float] = []
    reached = state.node == env.destination
    while not reached and state.step < max_steps:
        if env.n_actions(state.node) == 0:
            break
        action = policy(env, state)
        state, r, reached = env.step(state, action)
        nodes.append(state.node)
        rewards.append(r)
    return EpisodeResult(
        nodes=tuple(nodes),
        rewards=tuple(rewards),
        utility=path_utility(rewards),
        reached=reached,
        truncated=not reached,
    )


def greedy_policy(q_values: Callable):
    """Policy taking the argmax of q_values(node) over legal actions."""

    def policy(env, state):
        q = np.asarray(q_values(state.node), dtype=float)
        return int(np.argmax(q[: env.n_actions(state.node)]))

    return policy


def random_policy(rng: np.random.Generator):
    def policy(env, state):
        return int(rng.integers(env.n_actions(state.node)))

    return policy


@dataclass(frozen=True)
class OracleResult:
    route: tuple
    utility: float
    paths_enumerated: int


def brute_force_optimal(env: RouteEnv, max_paths: int = 1_000_000) -> OracleResult:
    """Exact optimum by enumerating all simple source->destination paths.

    Cycles can never improve a product of rewards in (0, 1], so simple paths
    suffice.  Ties are broken by the lexicographically smallest node
    sequence.  Guarded: more than ``max_paths`` complete paths is an error.
    """
    graph = env.graph
    best_route: Optional[tuple] = None
    best_u = -np.inf
    count = 0
    route = [graph.source]
    on_path = {graph.source}
    rewards: list[float] = []

    def visit(node: str):
        nonlocal best_route, best_u, count
        if node == graph.destination:
            count += 1
            if count > max_paths:
                raise ValueError("graph too large for oracle")
            u = path_utility(rewards)
            if u > best_u or (u == best_u and tuple(route) < best_route):
                best_u = u
                best_route = tuple(route)
            return
        for ei in graph.out_edges(node):
            head = graph.edges[ei].head
            if head in on_path:
                continue
            route.append(head)
            on_path.add(head)
            rewards.append(float(env.edge_rewards[ei]))
            visit(head)
            rewards.pop()
            on_path.remove(head)
            route.pop()

    visit(graph.source)
    if best_route is None:
        raise ValueError("unreachable destination")
    return OracleResult(route=best_route, utility=best_u, paths_enumerated=count)
