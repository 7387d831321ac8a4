"""Deception bonuses, classical deception metrics, episode rewards and returns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidConfigurationError
from .graph import EpisodeContext, WeightedGraph, shortest_distances
from .observer import DEFAULT_ALPHA, DEFAULT_GAMMA_C, build_observer, observer_posterior

MODES = ("exaggeration", "ambiguity")
METRICS = ("classical_ambiguity", "proposed_ambiguity", "exaggeration")


@dataclass(frozen=True)
class RewardConfig:
    mode: str = "exaggeration"
    gamma: float = 0.99
    goal_reward: float = 1.0
    timeout_penalty: float = -1.0
    alpha: float = DEFAULT_ALPHA
    gamma_c: float = DEFAULT_GAMMA_C

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigurationError(f"unknown reward mode {self.mode!r}")
        if not 0 < self.gamma < 1:
            raise InvalidConfigurationError("gamma must lie in (0, 1)")


def _split(posterior, true_goal_index):
    posterior = np.asarray(posterior, dtype=float)
    if posterior.shape[-1] < 2:
        raise InvalidConfigurationError("deception needs at least one decoy goal")
    true_p = posterior[..., true_goal_index]
    others = np.delete(posterior, true_goal_index, axis=-1)
    return true_p, others.max(axis=-1)


def exaggeration_bonus(posterior, true_goal_index: int):
    """Most likely decoy probability minus the true goal's probability."""
    true_p, decoy_p = _split(posterior, true_goal_index)
    out = decoy_p - true_p
    return float(out) if np.ndim(out) == 0 else out


def classical_exaggeration(posterior, true_goal_index: int):
    true_p, decoy_p = _split(posterior, true_goal_index)
    out = 1.0 + true_p - decoy_p
    return float(out) if np.ndim(out) == 0 else out


def classical_ambiguity(posterior):
    """Sum of absolute pairwise probability gaps over ordered goal pairs."""
    p = np.asarray(posterior, dtype=float)
    out = np.abs(p[..., :, None] - p[..., None, :]).sum(axis=(-1, -2))
    return float(out) if np.ndim(out) == 0 else out


def ambiguity_bonus(distance_tables: Mapping[int, np.ndarray], goals: Sequence[int],
                    true_goal_index: int, node, unreachable: float = np.inf):
    """Sum over decoys of ``1 - |d(s,G) - d(s,G*)| / d(G,G*)``, each term clamped to [0, 1].

    ``node`` may be an int or an array of node ids. Distances at or above
    ``unreachable`` (the graph's sentinel) mark a disconnected decoy.
    """
    goals = [int(g) for g in goals]
    if len(goals) < 2:
        raise InvalidConfigurationError("ambiguity needs at least one decoy goal")
    true_goal = goals[true_goal_index]
    d_true = distance_tables[true_goal]
    total = 0.0
    for i, g in enumerate(goals):
        if i == true_goal_index:
            continue
        d_goal = distance_tables[g]
        span = float(d_goal[true_goal])
        if not span > 0:
            raise InvalidConfigurationError(f"decoy {g} coincides with the true goal")
        if not np.isfinite(span) or span >= unreachable:
            raise InvalidConfigurationError(f"decoy {g} is unreachable from the true goal")
        term = 1.0 - np.abs(d_goal[node] - d_true[node]) / span
        total = total + np.clip(term, 0.0, 1.0)
    return float(total) if np.ndim(total) == 0 else total


def bonus_table(graph: WeightedGraph, start: int, goals: Sequence[int], true_goal_index: int,
                config: RewardConfig) -> np.ndarray:
    """Deception bonus of first arriving at each node, for a fixed episode setup.

    Both bonuses depend on the trajectory only through its start and current
    node, so one vector per episode covers every step.
    """
    goals = [int(g) for g in goals]
    nodes = np.arange(graph.n)
    if config.mode == "exaggeration":
        tables = build_observer(graph, goals, config.alpha, config.gamma_c)
        return np.asarray(exaggeration_bonus(observer_posterior(tables, start, nodes), true_goal_index))
    dist = {g: shortest_distances(graph, g) for g in goals}
    return np.asarray(ambiguity_bonus(dist, goals, true_goal_index, nodes, graph.unreachable))


def step_reward(context: EpisodeContext, config: RewardConfig, bonus: float) -> float:
    """Reward for arriving at ``context.position`` on step ``context.t``.

    Precedence: timeout, then reaching the true goal, then first-visit bonus.
    """
    if context.t > context.budget:
        return config.timeout_penalty
    node = context.position
    if node == context.true_goal:
        return config.goal_reward
    if node not in context.trajectory[:-1]:
        return float(bonus)
    return 0.0


def finalize_episode(rewards: Sequence[float], reached_goal: bool) -> list[float]:
    """Zero every deception bonus of a failed episode, keeping the terminal penalty."""
    rewards = [float(r) for r in rewards]
    if reached_goal or not rewards:
        return rewards
    return [0.0] * (len(rewards) - 1) + [rewards[-1]]


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    total, weight = 0.0, 1.0
    for r in rewards:
        total += weight * r
        weight *= gamma
    return total


def metric_heatmap(graph: WeightedGraph, start: int, goals: Sequence[int], true_goal_index: int,
                   metric: str, alpha: float = DEFAULT_ALPHA, gamma_c: float = DEFAULT_GAMMA_C) -> np.ndarray:
    """Evaluate a deception metric at every node for a fixed start and goal set."""
    goals = [int(g) for g in goals]
    for g in goals + [start]:
        graph.check_node(g)
    nodes = np.arange(graph.n)
    if metric == "proposed_ambiguity":
        dist = {g: shortest_distances(graph, g) for g in goals}
        return np.asarray(ambiguity_bonus(dist, goals, true_goal_index, nodes, graph.unreachable), dtype=float)
    if metric not in METRICS:
        raise InvalidArgumentError(f"unknown metric {metric!r}")
    tables = build_observer(graph, goals, alpha, gamma_c)
    post = observer_posterior(tables, start, nodes)
    if metric == "exaggeration":
        return np.asarray(exaggeration_bonus(post, true_goal_index), dtype=float)
    values = np.asarray(classical_ambiguity(post), dtype=float)
    values[goals] = 0.0
    return values
