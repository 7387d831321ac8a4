"""Worlds the policy can act in: text gridworlds and the continuous Voronoi forest."""

from .forest import ForestWorld, generate_forest, load_world, local_planning_graph, run_forest_episode, save_world
from .gridworld import GridWorld, load_corpus, load_gridworld, open_grid, random_maze
from .voronoi import voronoi_graph

__all__ = ["ForestWorld", "GridWorld", "generate_forest", "load_corpus", "load_gridworld", "load_world",
           "local_planning_graph", "open_grid", "random_maze", "run_forest_episode", "save_world",
           "voronoi_graph"]
