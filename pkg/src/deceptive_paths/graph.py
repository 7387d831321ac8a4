"""Immutable weighted graphs, shortest paths, k-hop neighbourhoods and node attributes."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InternalConsistencyError, InvalidArgumentError


class WeightedGraph:
    """Undirected graph on dense node ids ``0..n-1`` with strictly positive weights.

    Adjacency lists are sorted by neighbour id; that order defines the action
    order everywhere else in the package. Instances are treated as immutable;
    the private ``_cache`` only memoises pure functions of the graph.
    """

    __slots__ = ("n", "_adj", "coords", "nbr", "nbr_w", "degree", "total_weight", "_cache")

    def __init__(self, n: int, adjacency: Sequence[Sequence[tuple[int, float]]], coords=None):
        self.n = int(n)
        self._adj = tuple(tuple((int(v), float(w)) for v, w in sorted(row)) for row in adjacency)
        if len(self._adj) != self.n:
            raise InvalidArgumentError(f"adjacency has {len(self._adj)} rows, expected {self.n}")
        total = 0.0
        for u, row in enumerate(self._adj):
            seen = set()
            for v, w in row:
                if not 0 <= v < self.n:
                    raise InvalidArgumentError(f"edge ({u},{v}) references unknown node")
                if v == u:
                    raise InvalidArgumentError(f"self-loop at node {u}")
                if v in seen:
                    raise InvalidArgumentError(f"duplicate edge ({u},{v})")
                if not (w > 0 and np.isfinite(w)):
                    raise InvalidArgumentError(f"edge ({u},{v}) has non-positive weight {w}")
                seen.add(v)
                if (u, w) not in self._adj[v]:
                    raise InvalidArgumentError(f"edge ({u},{v},{w}) has no symmetric twin")
                if u < v:
                    total += w
        self.total_weight = total
        self.degree = np.array([len(row) for row in self._adj], dtype=np.int64)
        width = max(1, int(self.degree.max())) if self.n else 1
        self.nbr = np.full((self.n, width), -1, dtype=np.int64)
        self.nbr_w = np.zeros((self.n, width))
        for u, row in enumerate(self._adj):
            for j, (v, w) in enumerate(row):
                self.nbr[u, j] = v
                self.nbr_w[u, j] = w
        self.nbr.setflags(write=False)
        self.nbr_w.setflags(write=False)
        self.degree.setflags(write=False)
        if coords is not None:
            coords = np.array(coords, dtype=float).reshape(self.n, 2)
            coords.setflags(write=False)
        self.coords = coords
        self._cache = {}

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]], coords=None) -> "WeightedGraph":
        adj = [[] for _ in range(n)]
        seen = set()
        for u, v, w in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidArgumentError(f"edge ({u},{v}) references unknown node")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise InvalidArgumentError(f"duplicate edge {key}")
            seen.add(key)
            adj[u].append((v, w))
            adj[v].append((u, w))
        return cls(n, adj, coords)

    def neighbors(self, u: int) -> tuple[tuple[int, float], ...]:
        self.check_node(u)
        return self._adj[u]

    def edges(self):
        """Yield every undirected edge once as ``(u, v, w)`` with ``u < v``."""
        for u, row in enumerate(self._adj):
            for v, w in row:
                if u < v:
                    yield u, v, w

    @property
    def num_edges(self) -> int:
        return int(self.degree.sum()) // 2

    @property
    def unreachable(self) -> float:
        """Finite sentinel standing in for an infinite distance."""
        return self.total_weight + 1.0

    def has_edge(self, u: int, v: int) -> bool:
        return any(x == v for x, _ in self._adj[u])

    def weight(self, u: int, v: int) -> float:
        for x, w in self._adj[u]:
            if x == v:
                return w
        raise InvalidArgumentError(f"no edge ({u},{v})")

    def check_node(self, u) -> None:
        if not (isinstance(u, (int, np.integer)) and 0 <= u < self.n):
            raise InvalidArgumentError(f"unknown node id {u!r}")

    def __repr__(self):
        return f"WeightedGraph(n={self.n}, edges={self.num_edges})"


def shortest_distances(graph: WeightedGraph, source: int) -> np.ndarray:
    """Dijkstra distances from ``source``; unreachable nodes get ``graph.unreachable``.

    The result is indexed by node id and cached on the graph (read-only).
    """
    graph.check_node(source)
    key = ("dist", int(source))
    hit = graph._cache.get(key)
    if hit is not None:
        return hit
    dist = np.full(graph.n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, int(source))]
    done = np.zeros(graph.n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in graph._adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    dist[~np.isfinite(dist)] = graph.unreachable
    dist.setflags(write=False)
    graph._cache[key] = dist
    return dist


def hop_distances(graph: WeightedGraph, source: int, limit: int | None = None) -> dict[int, int]:
    """Unweighted BFS depth of every node within ``limit`` hops of ``source``."""
    graph.check_node(source)
    depth = {int(source): 0}
    queue = deque([int(source)])
    while queue:
        u = queue.popleft()
        if limit is not None and depth[u] >= limit:
            continue
        for v, _ in graph._adj[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth


class Neighborhood(NamedTuple):
    """Induced k-hop subgraph; ``nodes[i]`` is the original id of local node ``i``."""

    graph: WeightedGraph
    nodes: np.ndarray
    center: int


def k_hop_neighborhood(graph: WeightedGraph, center: int, k: int) -> Neighborhood:
    if k < 0:
        raise InvalidArgumentError("k must be non-negative")
    key = ("khop", int(center), int(k))
    hit = graph._cache.get(key)
    if hit is not None:
        return hit
    members = sorted(hop_distances(graph, center, k))
    local = {g: i for i, g in enumerate(members)}
    adj = [[(local[v], w) for v, w in graph._adj[g] if v in local] for g in members]
    coords = graph.coords[members] if graph.coords is not None else None
    nodes = np.array(members, dtype=np.int64)
    nodes.setflags(write=False)
    hood = Neighborhood(WeightedGraph(len(members), adj, coords), nodes, local[int(center)])
    graph._cache[key] = hood
    return hood


@dataclass
class EpisodeContext:
    """Mutable per-episode state; confined to one worker.

    ``t`` is the index of the step about to be taken (1 for the first move),
    so ``budget - t`` is the number of moves left after the current one.
    """

    start: int
    goals: tuple[int, ...]
    true_goal_index: int
    budget: float
    t: int = 1
    visited: set = field(default_factory=set)
    trajectory: list = field(default_factory=list)

    def __post_init__(self):
        self.goals = tuple(int(g) for g in self.goals)
        if len(set(self.goals)) != len(self.goals):
            raise InvalidArgumentError("goals must be distinct")
        if not 0 <= self.true_goal_index < len(self.goals):
            raise InvalidArgumentError("true_goal_index out of range")
        if not self.trajectory:
            self.trajectory = [int(self.start)]
        if self.trajectory[0] != self.start:
            raise InvalidArgumentError("trajectory must begin at start")
        self.visited = set(self.trajectory)

    @property
    def true_goal(self) -> int:
        return self.goals[self.true_goal_index]

    @property
    def decoys(self) -> tuple[int, ...]:
        return tuple(g for i, g in enumerate(self.goals) if i != self.true_goal_index)

    @property
    def ordered_goals(self) -> tuple[int, ...]:
        """True goal first, then decoys in episode order (attribute slot order)."""
        return (self.true_goal,) + self.decoys

    @property
    def position(self) -> int:
        return self.trajectory[-1]

    def move(self, node: int) -> bool:
        """Append ``node`` to the trajectory; returns True on a first visit."""
        node = int(node)
        first = node not in self.visited
        self.trajectory.append(node)
        self.visited.add(node)
        return first


def distance_tables_for(graph: WeightedGraph, goals: Iterable[int]) -> dict[int, np.ndarray]:
    return {int(g): shortest_distances(graph, g) for g in goals}


def _goal_columns(context: EpisodeContext, distance_tables: Mapping[int, np.ndarray]):
    cols = []
    for g in context.ordered_goals:
        table = distance_tables.get(g)
        if table is None:
            raise InternalConsistencyError(f"no distance table for goal {g}")
        cols.append(table)
    return cols


SCALINGS = ("raw", "normalized", "shared")


def attribute_matrix(graph: WeightedGraph, context: EpisodeContext, nodes, distance_tables,
                     scaling: str = "raw") -> np.ndarray:
    """Attribute rows for many nodes at once; see :func:`node_attributes`.

    ``scaling`` is ``raw`` (as is), ``normalized`` (distances over
    d(s1, G*), steps left over T_max) or ``shared`` (both over d(s1, G*)).
    """
    if scaling not in SCALINGS:
        raise InvalidArgumentError(f"unknown attribute scaling {scaling!r}")
    nodes = np.asarray(nodes, dtype=np.int64)
    cols = _goal_columns(context, distance_tables)
    out = np.empty((len(nodes), len(cols) + 2))
    visited = context.visited
    out[:, 0] = [1.0 if int(v) in visited else 0.0 for v in nodes]
    for i, table in enumerate(cols):
        out[:, 1 + i] = table[nodes]
    out[:, -1] = context.budget - context.t
    if scaling != "raw":
        scale = cols[0][context.start]
        if scale > 0:
            out[:, 1:-1] /= scale
        if scaling == "shared":
            if scale > 0:
                out[:, -1] /= scale
        elif context.budget > 0:
            out[:, -1] /= context.budget
    return out


def node_attributes(graph: WeightedGraph, context: EpisodeContext, node: int, distance_tables,
                    scaling: str = "raw") -> np.ndarray:
    """``[visited, d(node, G*), d(node, decoy_1), ..., budget - t]``."""
    graph.check_node(node)
    return attribute_matrix(graph, context, [node], distance_tables, scaling)[0]
