"""Ground truth and baselines: exhaustive deceptive-path search, shortest paths, policy evaluation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .deception import RewardConfig, bonus_table, discounted_return, finalize_episode, step_reward
from .errors import InvalidArgumentError, SearchSpaceError
from .graph import EpisodeContext, WeightedGraph, hop_distances, shortest_distances
from .policy import PolicyParameters
from .trainer import EpisodeSpec, GNNPolicy, run_episodes

MAX_NODES = 25
MAX_HORIZON = 14
MAX_STATES = 5_000_000


@dataclass
class EvalReport:
    goal_rate: float
    mean_deceptiveness: float
    mean_path_ratio: float          # NaN when no episode reached the goal
    episodes: int
    mean_return: float = 0.0
    rows: list = field(default_factory=list, repr=False)
    trajectories: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k not in ("rows", "trajectories")}
        return json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in data.items()},
                          indent=1, sort_keys=True)

    def write_csv(self, path) -> None:
        fields = ["spec", "episode", "reached_goal", "deceptiveness", "path_length", "path_ratio", "return"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)


def shortest_path(graph: WeightedGraph, start: int, goal: int) -> list[int]:
    """A minimum-weight path; each node's predecessor is its lowest-id tight neighbour."""
    graph.check_node(start)
    graph.check_node(goal)
    dist = shortest_distances(graph, start)
    if dist[goal] >= graph.unreachable:
        raise InvalidArgumentError(f"node {goal} is unreachable from {start}")
    path = [int(goal)]
    while path[-1] != start:
        v = path[-1]
        for u, w in graph.neighbors(v):
            if abs(dist[u] + w - dist[v]) <= 1e-9 * max(1.0, dist[v]) and dist[u] < dist[v]:
                path.append(u)
                break
    return path[::-1]


def brute_force_best_path(graph: WeightedGraph, start: int, true_goal: int, goals: Sequence[int], t_max: int,
                          reward_config: RewardConfig, bonus: np.ndarray | None = None):
    """Best discounted return over every walk from ``start`` that reaches ``true_goal`` within ``t_max`` steps.

    Walks may revisit nodes (a revisit earns nothing) and stop on first
    arrival at the true goal. The search memoises on (node, visited set, t)
    and prunes states that can no longer reach the goal in time. Among equal
    returns the lexicographically smallest path wins. ``bonus`` overrides the
    per-node bonus table (e.g. zeros).
    """
    goals = [int(g) for g in goals]
    if int(true_goal) not in goals:
        raise InvalidArgumentError("true_goal must be one of goals")
    for g in goals + [start]:
        graph.check_node(g)
    if start == true_goal:
        raise InvalidArgumentError("start coincides with the true goal")
    t_max = int(t_max)
    if graph.n > MAX_NODES and t_max > MAX_HORIZON:
        raise SearchSpaceError(
            f"instance too large for exhaustive search: {graph.n} nodes (limit {MAX_NODES}) "
            f"and T_max {t_max} (limit {MAX_HORIZON})")
    if graph.n > 62:
        raise SearchSpaceError(f"visited-set encoding supports at most 62 nodes, got {graph.n}")
    if bonus is None:
        bonus = bonus_table(graph, start, goals, goals.index(int(true_goal)), reward_config)
    bonus = np.asarray(bonus, dtype=float)
    hops = hop_distances(graph, int(true_goal))
    if start not in hops or hops[start] > t_max:
        raise InvalidArgumentError(f"true goal cannot be reached from {start} within {t_max} steps")
    gamma = reward_config.gamma
    goal_reward = reward_config.goal_reward
    adjacency = [[v for v, _ in graph.neighbors(u)] for u in range(graph.n)]
    memo = {}

    def best(node, visited, t):
        # Best return of steps t, t+1, ... discounted relative to step t.
        key = (node, visited, t)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= MAX_STATES:
            raise SearchSpaceError(f"search exceeded {MAX_STATES} memoised states "
                                   f"({graph.n} nodes, T_max {t_max})")
        top, choice = -math.inf, None
        for v in adjacency[node]:
            if v == true_goal:
                value = goal_reward
            else:
                if t + hops.get(v, math.inf) > t_max:
                    continue
                bit = 1 << v
                r = 0.0 if visited & bit else bonus[v]
                rest, _ = best(v, visited | bit, t + 1)
                if rest == -math.inf:
                    continue
                value = r + gamma * rest
            if value > top + 1e-12:
                top, choice = value, v
        memo[key] = (top, choice)
        return top, choice

    value, _ = best(int(start), 1 << int(start), 1)
    path, visited, t = [int(start)], 1 << int(start), 1
    while path[-1] != true_goal:
        _, nxt = memo[(path[-1], visited, t)]
        path.append(int(nxt))
        visited |= 1 << int(nxt)
        t += 1
    return path, float(value)


def replay_return(graph: WeightedGraph, path: Sequence[int], goals: Sequence[int], true_goal_index: int,
                  t_max: int, reward_config: RewardConfig) -> float:
    """Discounted return of a fixed walk under the ordinary episode reward pipeline."""
    ctx = EpisodeContext(int(path[0]), tuple(goals), true_goal_index, t_max)
    bonus = bonus_table(graph, ctx.start, goals, true_goal_index, reward_config)
    rewards, reached = [], False
    for node in path[1:]:
        if not graph.has_edge(ctx.position, int(node)):
            raise InvalidArgumentError(f"walk steps along a missing edge ({ctx.position}, {node})")
        ctx.move(int(node))
        rewards.append(step_reward(ctx, reward_config, bonus[int(node)]))
        timeout = ctx.t > ctx.budget
        reached = not timeout and int(node) == ctx.true_goal
        ctx.t += 1
        if timeout or reached:
            break
    return discounted_return(finalize_episode(rewards, reached), reward_config.gamma)


def evaluate_policy(params, specs: Sequence[EpisodeSpec], reward_config: RewardConfig, rng=None,
                    episodes_per_spec: int = 1, greedy: bool = False) -> EvalReport:
    """Roll out ``episodes_per_spec`` episodes on every spec and aggregate.

    ``params`` may be a parameter set or any policy object with an
    ``evaluate`` method (e.g. the shortest-path baseline).
    """
    if episodes_per_spec < 1:
        raise InvalidArgumentError("episodes_per_spec must be positive")
    policy = GNNPolicy(params) if isinstance(params, PolicyParameters) else params
    flat = [s for s in specs for _ in range(episodes_per_spec)]
    if not flat:
        raise InvalidArgumentError("no evaluation specs")
    if greedy:
        rngs = None
    else:
        if rng is None:
            raise InvalidArgumentError("stochastic evaluation needs an rng")
        seeds = rng.integers(0, 2 ** 63 - 1, size=len(flat))
        rngs = [np.random.default_rng(int(s)) for s in seeds]
    episodes = run_episodes(flat, policy, reward_config, rngs, greedy=greedy, record=False)
    rows, ratios = [], []
    for i, ep in enumerate(episodes):
        spec = ep.spec
        d = float(shortest_distances(spec.graph, spec.true_goal)[spec.start])
        ratio = ep.path_length / d if ep.reached_goal and d > 0 else float("nan")
        if ep.reached_goal:
            ratios.append(ratio)
        rows.append({"spec": i // episodes_per_spec, "episode": i % episodes_per_spec,
                     "reached_goal": int(ep.reached_goal), "deceptiveness": repr(ep.deceptiveness),
                     "path_length": repr(ep.path_length), "path_ratio": repr(ratio),
                     "return": repr(discounted_return(ep.rewards, reward_config.gamma))})
    return EvalReport(
        goal_rate=float(np.mean([e.reached_goal for e in episodes])),
        mean_deceptiveness=float(np.mean([e.deceptiveness for e in episodes])),
        mean_path_ratio=float(np.mean(ratios)) if ratios else float("nan"),
        episodes=len(episodes),
        mean_return=float(np.mean([discounted_return(e.rewards, reward_config.gamma) for e in episodes])),
        rows=rows,
        trajectories=[list(e.trajectory) for e in episodes])
