"""Minimal SVG output for grid heatmaps, trajectories and forest scenes.

Colour conventions: start blue, true goal green, decoy orange (a plan-B
decoy red). Heatmaps run linearly from white (lowest value) to dark purple
(highest value); walls are grey.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

START_COLOR = "#1f4fd1"
GOAL_COLOR = "#1a9a3a"
DECOY_COLOR = "#f08a00"
PLAN_B_COLOR = "#d62728"
WALL_COLOR = "#8c8c8c"
LOW_COLOR = (255, 255, 255)
HIGH_COLOR = (63, 0, 125)
CELL = 24


def color_scale(value: float, lo: float, hi: float) -> str:
    """Hex colour for ``value`` on the white-to-purple scale spanning [lo, hi]."""
    frac = 0.0 if hi <= lo else float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))
    rgb = [round(a + (b - a) * frac) for a, b in zip(LOW_COLOR, HIGH_COLOR)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _doc(width: float, height: float, body: list[str], title: str = "") -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {width:.3f} {height:.3f}">')
    parts = [head]
    if title:
        parts.append(f"<title>{escape(title)}</title>")
    parts.extend(body)
    parts.append("</svg>\n")
    return "\n".join(parts)


def _marker(x, y, color, r):
    return f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{r:.3f}" fill="{color}" stroke="black" stroke-width="1"/>'


def grid_heatmap_svg(world, values, marks: dict | None = None, title: str = "", lo=None, hi=None) -> str:
    """One coloured square per free cell; ``marks`` maps 'start'/'goal'/'decoy' to node ids."""
    values = np.asarray(values, dtype=float)
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    body = []
    for r, c in sorted(world.walls):
        body.append(f'<rect x="{c * CELL}" y="{r * CELL}" width="{CELL}" height="{CELL}" fill="{WALL_COLOR}"/>')
    for node, (r, c) in enumerate(world.cells):
        body.append(f'<rect x="{c * CELL}" y="{r * CELL}" width="{CELL}" height="{CELL}" '
                    f'fill="{color_scale(values[node], lo, hi)}" stroke="#dddddd" stroke-width="0.5"/>')
    body.extend(_grid_marks(world, marks or {}))
    return _doc(world.width * CELL, world.height * CELL, body, title)


def _grid_marks(world, marks):
    colors = {"start": START_COLOR, "goal": GOAL_COLOR, "decoy": DECOY_COLOR, "plan_b": PLAN_B_COLOR}
    out = []
    for name, node in marks.items():
        if node is None:
            continue
        r, c = world.cells[node]
        out.append(_marker((c + 0.5) * CELL, (r + 0.5) * CELL, colors.get(name, "black"), CELL * 0.3))
    return out


def visit_counts(n: int, trajectories) -> np.ndarray:
    counts = np.zeros(n)
    for traj in trajectories:
        for node in traj:
            counts[int(node)] += 1
    return counts


def grid_trajectories_svg(world, trajectories, marks: dict | None = None, title: str = "") -> str:
    """Visit-count heatmap of several trajectories with each path drawn on top."""
    counts = visit_counts(world.graph.n, trajectories)
    doc = grid_heatmap_svg(world, counts, marks, title, lo=0.0)
    lines = []
    for traj in trajectories:
        pts = " ".join(f"{(world.cells[v][1] + 0.5) * CELL:.1f},{(world.cells[v][0] + 0.5) * CELL:.1f}"
                       for v in traj)
        lines.append(f'<polyline points="{pts}" fill="none" stroke="#222222" stroke-opacity="0.35" '
                     f'stroke-width="1.5"/>')
    return doc.replace("</svg>\n", "\n".join(lines) + "\n</svg>\n")


def forest_svg(world, trajectories=(), graph=None, plan_b=None, title: str = "", scale: float = 30.0) -> str:
    """Trees, optional Voronoi edges, markers and trajectory polylines in world coordinates."""
    xmin, ymin, xmax, ymax = world.bounds

    def px(p):
        # Flip y so the world's +y points up on screen.
        return (p[0] - xmin) * scale, (ymax - p[1]) * scale

    body = [f'<rect x="0" y="0" width="{(xmax - xmin) * scale:.1f}" height="{(ymax - ymin) * scale:.1f}" '
            f'fill="#f7fbf2" stroke="black"/>']
    if graph is not None:
        for u, v, _ in graph.edges():
            (x1, y1), (x2, y2) = px(graph.coords[u]), px(graph.coords[v])
            body.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                        f'stroke="#b0b0b0" stroke-width="0.8"/>')
    for t in world.trees:
        x, y = px(t)
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{0.15 * scale:.2f}" fill="#2e6b1f"/>')
    for traj in trajectories:
        pts = " ".join("{:.2f},{:.2f}".format(*px(p)) for p in traj)
        body.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-opacity="0.6" '
                    f'stroke-width="2"/>')
    r = 0.3 * scale
    for point, color in ((world.start, START_COLOR), (world.goal, GOAL_COLOR), (world.decoy, DECOY_COLOR),
                         (plan_b, PLAN_B_COLOR)):
        if point is not None:
            body.append(_marker(*px(point), color, r))
    return _doc((xmax - xmin) * scale, (ymax - ymin) * scale, body, title)
