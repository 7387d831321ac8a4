"""Maximum-entropy observer: soft value tables per goal and the goal posterior.

The observer assumes a boundedly rational agent. For each candidate goal it
holds soft state values from softmax value iteration; the posterior of a goal
given a partial trajectory depends only on the start and current nodes.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DegeneratePosteriorError, InvalidArgumentError
from .graph import WeightedGraph

DEFAULT_ALPHA = 0.5
DEFAULT_GAMMA_C = 0.99
DEFAULT_TOLERANCE = 1e-6
MAX_ITERATIONS = 10_000

# Number of softmax value iterations actually run (cache misses included).
_vi_calls = 0
_lock = threading.Lock()


def value_iteration_calls() -> int:
    return _vi_calls


def softmax_value_iteration(graph: WeightedGraph, goal: int, alpha: float = DEFAULT_ALPHA,
                            gamma_c: float = DEFAULT_GAMMA_C, tolerance: float = DEFAULT_TOLERANCE,
                            max_iterations: int = MAX_ITERATIONS) -> np.ndarray:
    """Soft values ``V_G`` for every node, with ``goal`` absorbing at 0.

    Iterates ``V(s) = alpha * logsumexp_a((-c(s,a) + gamma_c * V(s')) / alpha)``
    until the max-norm change drops below ``tolerance``.
    """
    global _vi_calls
    graph.check_node(goal)
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    if not 0 < gamma_c <= 1:
        raise InvalidArgumentError("gamma_c must lie in (0, 1]")
    with _lock:
        _vi_calls += 1

    nbr = graph.nbr
    mask = nbr >= 0
    safe = np.where(mask, nbr, 0)
    cost = np.where(mask, graph.nbr_w, 0.0)
    isolated = graph.degree == 0
    value = np.zeros(graph.n)
    residual = np.inf
    for _ in range(max_iterations):
        q = np.where(mask, (gamma_c * value[safe] - cost) / alpha, -np.inf)
        top = q.max(axis=1)
        top[isolated] = 0.0
        new = alpha * (top + np.log(np.exp(q - top[:, None]).sum(axis=1)))
        new[isolated] = -graph.unreachable
        new[goal] = 0.0
        residual = float(np.max(np.abs(new - value)))
        value = new
        if residual < tolerance:
            break
    else:
        raise ConvergenceError(
            f"softmax value iteration did not converge in {max_iterations} iterations "
            f"(residual {residual:.3g})", residual=residual)
    if not np.all(np.isfinite(value)):
        raise ConvergenceError("softmax values became non-finite", residual=residual)
    value.setflags(write=False)
    return value


@dataclass(frozen=True)
class ObserverTables:
    goals: tuple
    values: dict            # goal node -> per-node soft value array
    priors: np.ndarray
    alpha: float = DEFAULT_ALPHA
    gamma_c: float = DEFAULT_GAMMA_C
    tolerance: float = DEFAULT_TOLERANCE

    def to_json(self) -> str:
        return json.dumps({str(g): [float(x) for x in self.values[g]] for g in self.goals})


def build_observer(graph: WeightedGraph, goals: Sequence[int], alpha: float = DEFAULT_ALPHA,
                   gamma_c: float = DEFAULT_GAMMA_C, priors=None,
                   tolerance: float = DEFAULT_TOLERANCE) -> ObserverTables:
    """Run softmax value iteration once per goal.

    Tables are memoised on the (immutable) graph, so building an observer for
    a goal set seen before costs no further iterations.
    """
    goals = tuple(int(g) for g in goals)
    if len(goals) == 0 or len(set(goals)) != len(goals):
        raise InvalidArgumentError("goals must be a non-empty list of distinct nodes")
    if priors is None:
        priors = np.full(len(goals), 1.0 / len(goals))
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (len(goals),) or np.any(priors <= 0) or abs(priors.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError("priors must be positive and sum to 1")
    values = {}
    for g in goals:
        key = ("softvi", g, float(alpha), float(gamma_c), float(tolerance))
        table = graph._cache.get(key)
        if table is None:
            table = softmax_value_iteration(graph, g, alpha, gamma_c, tolerance)
            graph._cache[key] = table
        values[g] = table
    return ObserverTables(goals, values, priors, float(alpha), float(gamma_c), float(tolerance))


def observer_posterior(tables: ObserverTables, start: int, current) -> np.ndarray:
    """``Pr(G | trajectory)`` for each goal in ``tables.goals`` order.

    ``current`` may be a single node or an array of nodes; in the latter case
    the result has one row per node.
    """
    current = np.asarray(current)
    scalar = current.ndim == 0
    current = np.atleast_1d(current).astype(np.int64)
    logits = np.stack([tables.values[g][current] - tables.values[g][start] for g in tables.goals], axis=-1)
    logits = logits + np.log(tables.priors)
    finite = np.isfinite(logits)
    if not np.all(finite.any(axis=-1)):
        raise DegeneratePosteriorError("posterior has no finite mass")
    logits = logits - np.max(np.where(finite, logits, -np.inf), axis=-1, keepdims=True)
    mass = np.where(finite, np.exp(logits), 0.0)
    total = mass.sum(axis=-1, keepdims=True)
    if not np.all(total > 0):
        raise DegeneratePosteriorError("posterior mass is zero")
    post = mass / total
    return post[0] if scalar else post
