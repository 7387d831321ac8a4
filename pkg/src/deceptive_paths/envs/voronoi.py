"""Voronoi planning graphs built from tree positions by Delaunay duality.

Every Delaunay triangle contributes its circumcenter as a Voronoi vertex.
An interior Delaunay edge (shared by two triangles) becomes the ridge joining
the two circumcenters; a hull edge becomes a ray from its triangle's
circumcenter pointing away from the opposite vertex. Ridges are clipped to
the region (a rectangle, optionally intersected with a disk); clipped ends
become boundary nodes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from ..errors import GeometryError
from ..graph import WeightedGraph

MERGE_TOLERANCE = 1e-9


class Ridge(NamedTuple):
    start: np.ndarray
    end: np.ndarray
    trees: tuple            # indices of the two generator trees


def circumcenter(a, b, c) -> np.ndarray:
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    # Solve relative to a for better conditioning.
    bx, by = b - a
    cx, cy = c - a
    d = 2.0 * (bx * cy - by * cx)
    if d == 0:
        raise GeometryError("collinear points have no circumcenter")
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    return a + np.array([(cy * b2 - by * c2) / d, (bx * c2 - cx * b2) / d])


def _triangulate(trees: np.ndarray) -> Delaunay:
    if trees.ndim != 2 or trees.shape[1] != 2:
        raise GeometryError("trees must be an (n, 2) array of points")
    if len(trees) < 3:
        raise GeometryError(f"need at least 3 trees for a bounded diagram, got {len(trees)}")
    if len(np.unique(trees, axis=0)) != len(trees):
        raise GeometryError("duplicate tree positions")
    spread = trees - trees.mean(axis=0)
    if np.linalg.matrix_rank(spread, tol=1e-12 * max(1.0, np.abs(spread).max())) < 2:
        raise GeometryError("all trees are collinear")
    try:
        return Delaunay(trees)
    except QhullError as exc:
        raise GeometryError(f"triangulation failed: {exc}") from exc


def _clip_interval(p, d, t0, t1, bounds, disk):
    """Clip ``p + t d`` for t in [t0, t1] to the region; None when empty."""
    xmin, ymin, xmax, ymax = bounds
    for q, lo, hi in ((0, xmin, xmax), (1, ymin, ymax)):
        if d[q] == 0:
            if p[q] < lo or p[q] > hi:
                return None
            continue
        ta, tb = (lo - p[q]) / d[q], (hi - p[q]) / d[q]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
    if disk is not None:
        center, radius = disk
        f = p - np.asarray(center, dtype=float)
        a = d @ d
        b = 2.0 * (f @ d)
        c = f @ f - radius * radius
        disc = b * b - 4 * a * c
        if disc < 0:
            return None
        root = np.sqrt(disc)
        t0 = max(t0, (-b - root) / (2 * a))
        t1 = min(t1, (-b + root) / (2 * a))
    if not t1 > t0:
        return None
    return t0, t1


def _inside(point, bounds, disk) -> bool:
    xmin, ymin, xmax, ymax = bounds
    if not (xmin <= point[0] <= xmax and ymin <= point[1] <= ymax):
        return False
    if disk is not None:
        center, radius = disk
        return float(np.linalg.norm(point - np.asarray(center, dtype=float))) <= radius
    return True


def voronoi_vertices(trees, bounds=None, clip: bool = True, disk=None) -> np.ndarray:
    """Circumcenters of the Delaunay triangles, restricted to the region when clipping."""
    trees = np.asarray(trees, dtype=float)
    tri = _triangulate(trees)
    centers = np.array([circumcenter(*trees[s]) for s in tri.simplices])
    if clip:
        if bounds is None:
            raise GeometryError("clipping needs a bounding rectangle")
        centers = np.array([c for c in centers if _inside(c, bounds, disk)]).reshape(-1, 2)
    return centers


def voronoi_ridges(trees, bounds=None, clip: bool = True, disk=None) -> list[Ridge]:
    """Voronoi ridge segments with their generator pairs.

    With ``clip`` the ridges are cut to ``bounds`` (xmin, ymin, xmax, ymax),
    further intersected with ``disk`` = (center, radius) when given, and hull
    rays are included. Without it only finite ridges are returned, uncut.
    """
    trees = np.asarray(trees, dtype=float)
    tri = _triangulate(trees)
    simplices = tri.simplices
    centers = np.array([circumcenter(*trees[s]) for s in simplices])
    if clip and bounds is None:
        raise GeometryError("clipping needs a bounding rectangle")
    if clip:
        xmin, ymin, xmax, ymax = bounds
        reach = 4.0 * (abs(xmax - xmin) + abs(ymax - ymin) + np.abs(centers).max() + 1.0)

    ridges = []
    for k, simplex in enumerate(simplices):
        for local in range(3):
            i, j = sorted((int(simplex[(local + 1) % 3]), int(simplex[(local + 2) % 3])))
            other = tri.neighbors[k, local]
            if other >= 0:
                if other < k:
                    continue            # each shared edge once
                p, q = centers[k], centers[other]
                if not clip:
                    ridges.append(Ridge(p, q, (i, j)))
                    continue
                d = q - p
                span = _clip_interval(p, d, 0.0, 1.0, bounds, disk) if np.any(d) else None
            else:
                if not clip:
                    continue
                p = centers[k]
                edge = trees[j] - trees[i]
                d = np.array([-edge[1], edge[0]])
                if d @ (trees[simplex[local]] - trees[i]) > 0:
                    d = -d
                d = d / np.linalg.norm(d)
                span = _clip_interval(p, d, 0.0, reach, bounds, disk)
            if span is None:
                continue
            t0, t1 = span
            ridges.append(Ridge(p + t0 * d, p + t1 * d, (i, j)))
    return ridges


def voronoi_graph(trees, bounds=None, clip: bool = True, disk=None) -> WeightedGraph:
    """Planning graph over Voronoi vertices, weighted by Euclidean ridge length.

    Coincident points (cocircular trees, ridges clipped at a shared corner)
    are merged. Node ids follow lexicographic (x, y) order of the coordinates.
    """
    ridges = voronoi_ridges(trees, bounds, clip, disk)
    vertices = voronoi_vertices(trees, bounds, clip, disk)
    points = np.array([pt for r in ridges for pt in (r.start, r.end)] + list(vertices)).reshape(-1, 2)
    if len(points) == 0:
        return WeightedGraph(0, [], coords=np.zeros((0, 2)))
    # Union coincident endpoints.
    parent = list(range(len(points)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in sorted(cKDTree(points).query_pairs(MERGE_TOLERANCE)):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(points))])
    unique_roots = np.unique(roots)
    reps = points[unique_roots]
    order = np.lexsort((reps[:, 1], reps[:, 0]))
    node_of_root = {int(unique_roots[o]): rank for rank, o in enumerate(order)}
    coords = reps[order]

    edges = {}
    for k in range(len(ridges)):
        u = node_of_root[int(roots[2 * k])]
        v = node_of_root[int(roots[2 * k + 1])]
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        w = float(np.linalg.norm(coords[u] - coords[v]))
        if w <= 0:
            continue
        edges[key] = min(w, edges.get(key, np.inf))
    return WeightedGraph.from_edges(len(coords), [(u, v, w) for (u, v), w in sorted(edges.items())], coords)


def nearest_node(graph: WeightedGraph, point) -> int:
    """Closest node to ``point``; the lowest id wins exact ties."""
    if graph.n == 0:
        raise GeometryError("graph has no nodes")
    dist = np.linalg.norm(graph.coords - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(dist))
