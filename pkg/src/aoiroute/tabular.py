"""Tabular planning for the multiplicative value recursion.

The value of taking an edge is its reward times the (discounted) best value
of the successor: Q(s,a) = r * (max_a' Q(s',a'))**gamma, with Q = r on edges
into the destination.  Because x -> x**gamma is monotone on [0,1] this is
exactly additive Q-learning on log-rewards, which is used here both as a
numerical cross-check and as the convergence argument (the operator is a
contraction in log space for gamma < 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .routing import RouteEnv, EpisodeResult, greedy_policy, rollout
from .rngutil import substream

__all__ = [
    "EpsilonSchedule",
    "QTable",
    "value_iteration",
    "q_learning_update",
    "q_learn",
    "log_domain_check",
    "greedy_route",
    "save_qtable",
    "load_qtable",
    "write_learning_curve",
    "LEARNING_CURVE_HEADER",
]

LEARNING_CURVE_HEADER = "episode,utility"


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear exploration decay over the first ``decay_fraction`` of episodes."""

    start: float = 1.0
    end: float = 0.05
    decay_fraction: float = 0.8

    def __post_init__(self):
        if not (0 <= self.end <= self.start <= 1) or not (0 < self.decay_fraction <= 1):
            raise ValueError("invalid epsilon schedule")

    def value(self, episode: int, total_episodes: int) -> float:
        span = max(1, int(self.decay_fraction * total_episodes))
        frac = min(1.0, episode / span)
        return self.start + frac * (self.end - self.start)


@dataclass
class QTable:
    """Per-node action values (and visit counts) plus the discount used."""

    q: dict
    gamma: float
    visits: dict = field(default_factory=dict)

    def state_value(self, node: str) -> float:
        values = self.q.get(node)
        if values is None or len(values) == 0:
            return 0.0
        return float(np.max(values))

    def greedy_action(self, node: str) -> int:
        return int(np.argmax(self.q[node]))


def _init_tables(env: RouteEnv):
    q = {}
    for node in env.graph.node_ids():
        if node == env.destination:
            continue
        deg = env.n_actions(node)
        q[node] = np.zeros(deg)
    return q


def _successors(env: RouteEnv, node: str):
    for a in range(env.n_actions(node)):
        ei = env.graph.out_edges(node)[a]
        yield a, env.graph.edges[ei].head, float(env.edge_rewards[ei])


def value_iteration(
    env: RouteEnv, gamma: float = 0.9, tol: float = 1e-12, max_iters: int = 100_000
) -> QTable:
    """Fixed point of the multiplicative Bellman operator.

    Synchronous sweeps from Q = 0 converge monotonically to the least fixed
    point, which is the supremum of path products; states that cannot reach
    the destination keep value 0.
    """
    q = _init_tables(env)
    for _ in range(max_iters):
        delta = 0.0
        values = {node: (np.max(arr) if arr.size else 0.0) for node, arr in q.items()}
        new_q = {}
        for node, arr in q.items():
            cur = arr.copy()
            for a, head, r in _successors(env, node):
                if head == env.destination:
                    cur[a] = r
                else:
                    cur[a] = r * float(values[head]) ** gamma
            if cur.size:
                delta = max(delta, float(np.max(np.abs(cur - arr))))
            new_q[node] = cur
        q = new_q
        if delta < tol:
            return QTable(q=q, gamma=gamma)
    raise ValueError("divergence")


def q_learning_update(
    q: dict,
    node: str,
    action: int,
    reward: float,
    next_node: str,
    terminal: bool,
    alpha: float,
    gamma: float,
) -> float:
    """One Q-learning step; returns the new Q(node, action)."""
    if terminal:
        target = reward
    else:
        next_values = q.get(next_node)
        v = float(np.max(next_values)) if next_values is not None and next_values.size else 0.0
        target = reward * v**gamma
    q[node][action] = (1.0 - alpha) * q[node][action] + alpha * target
    return float(q[node][action])


def q_learn(
    env: RouteEnv,
    gamma: float = 0.9,
    alpha: float = 0.1,
    schedule: EpsilonSchedule = EpsilonSchedule(),
    episodes: int = 2000,
    seed: int = 0,
    max_steps: Optional[int] = None,
):
    """Tabular Q-learning with epsilon-greedy exploration.

    Per-step RNG order: the exploration test first, then (only when
    exploring) the random action.  Returns (QTable, learning curve) where
    the curve holds one realized episode utility per episode.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if max_steps is None:
        max_steps = 4 * len(env.graph.nodes)
    rng = substream(seed, "train")
    q = _init_tables(env)
    visits = {node: np.zeros(arr.size, dtype=int) for node, arr in q.items()}
    curve = []
    for episode in range(episodes):
        eps = schedule.value(episode, episodes)
        state = env.reset()
        rewards = []
        for _ in range(max_steps):
            if state.node == env.destination or env.n_actions(state.node) == 0:
                break
            if rng.random() < eps:
                action = int(rng.integers(env.n_actions(state.node)))
            else:
                action = int(np.argmax(q[state.node]))
            nxt, r, terminal = env.step(state, action)
            q_learning_update(q, state.node, action, r, nxt.node, terminal, alpha, gamma)
            visits[state.node][action] += 1
            rewards.append(r)
            state = nxt
            if terminal:
                break
        acc = 1.0
        for r in reversed(rewards):
            acc = r * acc
        curve.append((episode, acc))
    return QTable(q=q, gamma=gamma, visits=visits), curve


def log_domain_check(env: RouteEnv, gamma: float = 0.9, tol: float = 1e-12) -> float:
    """Max |exp(additive log-reward fixed point) - multiplicative fixed point|.

    log(r * Q**gamma) = log r + gamma * log Q, so standard additive value
    iteration on log-rewards must reproduce the multiplicative fixed point
    exactly (up to floating-point error).
    """
    mult = value_iteration(env, gamma=gamma, tol=tol)
    logq = {node: np.full(arr.size, -np.inf) for node, arr in mult.q.items()}
    for _ in range(100_000):
        values = {
            node: (np.max(arr) if arr.size else -np.inf) for node, arr in logq.items()
        }
        new_logq = {}
        delta = 0.0
        for node, arr in logq.items():
            cur = arr.copy()
            for a, head, r in _successors(env, node):
                if head == env.destination:
                    cur[a] = np.log(r)
                else:
                    v = values.get(head, -np.inf)
                    cur[a] = np.log(r) + gamma * v
            if cur.size:
                diff = np.abs(cur - arr)
                diff[np.isinf(cur) & np.isinf(arr)] = 0.0
                if diff.size:
                    delta = max(delta, float(np.max(diff)))
            new_logq[node] = cur
        logq = new_logq
        if delta < tol:
            break
    worst = 0.0
    for node, arr in mult.q.items():
        worst = max(worst, float(np.max(np.abs(np.exp(logq[node]) - arr))) if arr.size else 0.0)
    return worst


def greedy_route(env: RouteEnv, table: QTable, max_steps: int = 1000) -> EpisodeResult:
    return rollout(env, greedy_policy(lambda node: table.q[node]), max_steps)


def save_qtable(table: QTable, path) -> None:
    doc = {
        "gamma": table.gamma,
        "q": {node: [float(v) for v in arr] for node, arr in table.q.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_qtable(path) -> QTable:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return QTable(
        q={node: np.asarray(vals, dtype=float) for node, vals in doc["q"].items()},
        gamma=doc["gamma"],
    )


def write_learning_curve(curve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LEARNING_CURVE_HEADER + "\n")
        for episode, utility in curve:
            fh.write(f"{episode},{utility!r}\n")
