"""Continuous forest navigation with local Voronoi perception.

The agent never sees the whole forest. At each step it triangulates the
trees inside its perception disk, plans over the clipped Voronoi ridges, and
feeds the k-hop neighbourhood of its nearest ridge vertex to the grid-trained
policy. Goal and decoy distances are straight-line distances, and the budget
is measured in world units of distance travelled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..errors import GeometryError, InvalidArgumentError, NoActionError, ParseError
from ..graph import WeightedGraph, k_hop_neighborhood
from ..policy import PolicyParameters, sample_action
from .voronoi import nearest_node, voronoi_graph

Point = tuple


@dataclass(frozen=True)
class ForestWorld:
    trees: tuple                    # ((x, y), ...)
    bounds: tuple                   # (xmin, ymin, xmax, ymax)
    start: Point
    goal: Point
    decoy: Point
    perception_radius: float
    goal_capture_radius: float | None = None
    distance_budget: float | None = None
    tree_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple((float(x), float(y)) for x, y in self.trees))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        for name in ("start", "goal", "decoy"):
            p = tuple(float(c) for c in getattr(self, name))
            object.__setattr__(self, name, p)
            if not _in_bounds(p, self.bounds):
                raise GeometryError(f"{name} {p} lies outside the bounds")
            if self.tree_radius > 0 and self.trees:
                gap = np.min(np.linalg.norm(np.asarray(self.trees) - p, axis=1))
                if gap < self.tree_radius:
                    raise GeometryError(f"{name} {p} lies inside a tree")
        if not self.perception_radius > 0:
            raise InvalidArgumentError("perception_radius must be positive")
        if self.goal_capture_radius is None:
            object.__setattr__(self, "goal_capture_radius", mean_tree_separation(self.trees) / 2)

    @property
    def tree_array(self) -> np.ndarray:
        return np.asarray(self.trees, dtype=float).reshape(-1, 2)

    def to_json(self) -> str:
        data = asdict(self)
        data["trees"] = [list(t) for t in self.trees]
        return json.dumps(data, indent=1)


def _in_bounds(p, bounds) -> bool:
    xmin, ymin, xmax, ymax = bounds
    return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax


def mean_tree_separation(trees) -> float:
    """Mean distance from each tree to its nearest neighbour."""
    trees = np.asarray(trees, dtype=float).reshape(-1, 2)
    if len(trees) < 2:
        return 1.0
    d = np.linalg.norm(trees[:, None] - trees[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def generate_forest(bounds, density: float, min_separation: float, seed: int,
                    max_attempts: int | None = None) -> list[tuple[float, float]]:
    """Rejection-sample tree positions at least ``min_separation`` apart.

    ``density`` is trees per unit area; the target count is its product with
    the bounds' area. Sampling stops early once ``max_attempts`` candidates
    (default 30 per target tree) have been drawn.
    """
    xmin, ymin, xmax, ymax = (float(b) for b in bounds)
    if not (xmax > xmin and ymax > ymin):
        raise InvalidArgumentError("bounds must have positive area")
    if density < 0 or min_separation < 0:
        raise InvalidArgumentError("density and min_separation must be non-negative")
    target = int(round(density * (xmax - xmin) * (ymax - ymin)))
    attempts = max_attempts if max_attempts is not None else 30 * max(target, 1)
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(attempts):
        if len(trees) >= target:
            break
        p = rng.uniform((xmin, ymin), (xmax, ymax))
        if trees and np.min(np.linalg.norm(np.asarray(trees) - p, axis=1)) < min_separation:
            continue
        trees.append((float(p[0]), float(p[1])))
    return trees


def make_forest_world(seed: int, num_trees: int = 60, size: float = 15.0, min_separation: float = 1.2,
                      visibility: float = 2.0, goal_capture_radius: float | None = None) -> ForestWorld:
    """Seeded square forest with start at the bottom, goal at the top and a decoy off to one side.

    ``visibility`` is the perception radius in multiples of the mean tree separation.
    """
    bounds = (0.0, 0.0, size, size)
    trees = generate_forest(bounds, num_trees / size ** 2, min_separation, seed)
    start = (size / 2, 1.0)
    goal = (size / 2, size - 1.0)
    decoy = (size - 1.5, size / 2 + 1.0)
    clearance = min_separation / 2
    keep = [t for t in trees
            if min(np.hypot(t[0] - p[0], t[1] - p[1]) for p in (start, goal, decoy)) >= clearance]
    radius = visibility * mean_tree_separation(keep)
    return ForestWorld(tuple(keep), bounds, start, goal, decoy, radius, goal_capture_radius,
                       tree_radius=0.0)


def save_world(world: ForestWorld, path) -> None:
    Path(path).write_text(world.to_json())


def load_world(path) -> ForestWorld:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read forest world {path}: {exc}") from exc
    required = ("trees", "bounds", "start", "goal", "decoy", "perception_radius")
    missing = [k for k in required if k not in data]
    if missing:
        raise ParseError(f"forest world is missing {missing}")
    return ForestWorld(**{k: v for k, v in data.items() if k in ForestWorld.__dataclass_fields__})


class LocalPlan(NamedTuple):
    graph: WeightedGraph | None
    agent: int | None
    d_goal: np.ndarray | None
    d_decoy: np.ndarray | None
    degraded: bool


def _attach_goal(graph: WeightedGraph, trees: np.ndarray, goal) -> WeightedGraph:
    # A visible goal becomes a node linked to the vertices of the Voronoi cell
    # holding it; the cell is convex, so every link stays inside that cell.
    goal = np.asarray(goal, dtype=float)
    gap = np.linalg.norm(graph.coords - goal, axis=1)
    if graph.n and gap.min() <= 1e-9:
        return graph
    owner = trees[np.argmin(np.linalg.norm(trees - goal, axis=1))]
    to_trees = np.linalg.norm(graph.coords[:, None] - trees[None], axis=-1)
    to_owner = np.linalg.norm(graph.coords - owner, axis=1)
    cell = np.flatnonzero(to_owner <= to_trees.min(axis=1) + 1e-7)
    if len(cell) == 0:
        return graph
    edges = list(graph.edges()) + [(int(v), graph.n, float(gap[v])) for v in cell]
    return WeightedGraph.from_edges(graph.n + 1, edges, np.vstack([graph.coords, goal]))


def local_planning_graph(world: ForestWorld, position, decoy=None) -> LocalPlan:
    """Voronoi graph of the trees inside the perception disk, clipped to disk and bounds.

    A goal inside the disk is added as one extra node. Falls back to a
    degraded plan (no graph) when the visible trees cannot form a bounded
    diagram or the nearest node has no edges.
    """
    position = np.asarray(position, dtype=float)
    decoy = world.decoy if decoy is None else decoy
    trees = world.tree_array
    inside = trees[np.linalg.norm(trees - position, axis=1) <= world.perception_radius]
    inside = inside[np.lexsort((inside[:, 1], inside[:, 0]))]
    if len(inside) < 3:
        return LocalPlan(None, None, None, None, True)
    try:
        graph = voronoi_graph(inside, world.bounds, clip=True, disk=(position, world.perception_radius))
    except GeometryError:
        return LocalPlan(None, None, None, None, True)
    if graph.n == 0:
        return LocalPlan(None, None, None, None, True)
    if np.linalg.norm(np.asarray(world.goal) - position) <= world.perception_radius:
        graph = _attach_goal(graph, inside, world.goal)
    agent = nearest_node(graph, position)
    if graph.degree[agent] == 0:
        return LocalPlan(None, None, None, None, True)
    d_goal = np.linalg.norm(graph.coords - np.asarray(world.goal), axis=1)
    d_decoy = np.linalg.norm(graph.coords - np.asarray(decoy, dtype=float), axis=1)
    return LocalPlan(graph, agent, d_goal, d_decoy, False)


@dataclass
class ForestEpisode:
    records: list = field(default_factory=list)    # one dict per trajectory point
    reached_goal: bool = False
    budget_exhausted: bool = False
    initial_budget: float = 0.0

    @property
    def points(self) -> np.ndarray:
        return np.array([[r["x"], r["y"]] for r in self.records])

    @property
    def path_length(self) -> float:
        p = self.points
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0

    def to_json(self) -> str:
        return json.dumps(self.records)


def lateral_deviation(points, start, goal, decoy) -> float:
    """Largest signed offset from the start-goal line, positive on the decoy's side."""
    points = np.asarray(points, dtype=float)
    start, goal, decoy = (np.asarray(p, dtype=float) for p in (start, goal, decoy))
    axis = goal - start
    normal = np.array([-axis[1], axis[0]]) / np.linalg.norm(axis)
    if normal @ (decoy - start) < 0:
        normal = -normal
    return float(((points - start) @ normal).max())


def run_forest_episode(world: ForestWorld, params, extra_distance: float,
                       rng=None, greedy: bool = False, t_switch: int | None = None,
                       plan_b_decoy=None, max_steps: int = 1000) -> ForestEpisode:
    """Drive the grid-trained policy through the forest without any fine-tuning.

    The budget starts at the straight-line start-goal distance plus
    ``extra_distance`` and shrinks by the Euclidean length of every step.
    From step ``t_switch`` on, the decoy attributes refer to ``plan_b_decoy``.
    ``params`` is a parameter set or any policy with ``config`` and ``evaluate``.
    """
    from ..trainer import GNNPolicy
    policy = GNNPolicy(params) if isinstance(params, PolicyParameters) else params
    if extra_distance < 0:
        raise InvalidArgumentError("extra_distance must be non-negative")
    if t_switch is not None and plan_b_decoy is None:
        raise InvalidArgumentError("t_switch needs a plan-B decoy")
    if rng is None and not greedy:
        raise InvalidArgumentError("stochastic rollouts need an rng")
    goal = np.asarray(world.goal)
    position = np.asarray(world.start, dtype=float)
    budget = float(np.linalg.norm(goal - position)) + float(extra_distance)
    if world.distance_budget is not None:
        budget = float(world.distance_budget) + float(extra_distance)
    episode = ForestEpisode(initial_budget=budget)
    decoy = tuple(world.decoy)
    episode.records.append({"t": 0, "x": float(position[0]), "y": float(position[1]),
                            "budget_remaining": budget, "chosen_edge": None, "decoy": list(decoy)})
    history = [position.copy()]
    k = policy.config.num_layers
    fallback_step = mean_tree_separation(world.trees) / 2
    scale = float(np.linalg.norm(goal - position))
    for t in range(1, max_steps + 1):
        if np.linalg.norm(goal - position) <= world.goal_capture_radius or budget <= 0:
            break
        if t_switch is not None and t == t_switch:
            decoy = tuple(float(c) for c in plan_b_decoy)
        plan = local_planning_graph(world, position, decoy)
        edge = None
        if plan.degraded:
            # Straight-line step toward the goal.
            gap = goal - position
            length = min(fallback_step, float(np.linalg.norm(gap)))
            target = position + gap / np.linalg.norm(gap) * length
        else:
            g = plan.graph
            weights = np.array([w for _, _, w in g.edges()])
            eps = 0.5 * float(weights.mean())
            past = np.asarray(history)
            visited = (np.linalg.norm(g.coords[:, None] - past[None], axis=-1) <= eps).any(axis=1)
            hood = k_hop_neighborhood(g, plan.agent, k)
            nodes = hood.nodes
            x = np.column_stack([visited[nodes].astype(float), plan.d_goal[nodes], plan.d_decoy[nodes],
                                 np.full(len(nodes), budget)])
            scaling = policy.config.attribute_scaling
            if scaling != "raw":
                x[:, 1:3] /= scale
                x[:, 3] /= scale if scaling == "shared" else episode.initial_budget
            out = policy.evaluate([(hood.graph, x, hood.center)])[0]
            index, _ = sample_action(out, rng, greedy)
            nxt = int(nodes[hood.graph.nbr[hood.center, index]])
            target = g.coords[nxt].copy()
            edge = [[float(c) for c in g.coords[plan.agent]], [float(c) for c in target]]
        step = float(np.linalg.norm(target - position))
        if step <= 0:
            raise NoActionError("forest step has zero length")
        budget -= step
        position = target
        history.append(position.copy())
        episode.records.append({"t": t, "x": float(position[0]), "y": float(position[1]),
                                "budget_remaining": budget, "chosen_edge": edge, "decoy": list(decoy)})
    captured = np.linalg.norm(goal - position) <= world.goal_capture_radius
    episode.reached_goal = bool(captured and budget >= 0)
    episode.budget_exhausted = bool(not episode.reached_goal and budget <= 0)
    return episode
