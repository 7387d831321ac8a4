"""Text gridworld maps: parsing, writing, and procedural corpus generation.

Map format, one row per line::

    #  wall (no node)
    .  free cell
    S  start, G true goal, D decoy (all free)

Free cells become nodes in row-major order; orthogonally adjacent free cells
are joined by unit-weight edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError, ParseError
from ..graph import WeightedGraph, hop_distances

FREE = ".SGD"
MARKERS = {"S": "start", "G": "goal", "D": "decoy"}


@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    walls: frozenset
    graph: WeightedGraph
    cells: tuple            # node id -> (row, col)
    start: int | None = None
    goal: int | None = None
    decoy: int | None = None
    name: str = ""

    def node_at(self, row: int, col: int) -> int:
        try:
            return self._index[(row, col)]
        except KeyError:
            raise InvalidArgumentError(f"cell ({row},{col}) is not a free cell") from None

    @property
    def _index(self):
        return {rc: i for i, rc in enumerate(self.cells)}

    def render(self, marks: dict | None = None) -> str:
        marks = marks or {}
        rows = [["#" if (r, c) in self.walls else "." for c in range(self.width)] for r in range(self.height)]
        for ch, node in marks.items():
            if node is not None:
                r, c = self.cells[node]
                rows[r][c] = ch
        return "\n".join("".join(r) for r in rows) + "\n"


def grid_from_rows(rows: list[str], name: str = "") -> GridWorld:
    rows = [r.rstrip("\r\n") for r in rows]
    while rows and not rows[-1].strip():
        rows.pop()
    if not rows:
        raise ParseError("empty map")
    width = len(rows[0])
    if width == 0 or any(len(r) != width for r in rows):
        raise ParseError("map rows must all have the same non-zero length")
    walls, cells, marks = set(), [], {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls.add((r, c))
            elif ch in FREE:
                if ch in MARKERS:
                    if MARKERS[ch] in marks:
                        raise ParseError(f"marker {ch!r} appears more than once")
                    marks[MARKERS[ch]] = len(cells)
                cells.append((r, c))
            else:
                raise ParseError(f"invalid cell marker {ch!r} at row {r}, column {c}")
    index = {rc: i for i, rc in enumerate(cells)}
    edges = []
    for i, (r, c) in enumerate(cells):
        for rc in ((r, c + 1), (r + 1, c)):
            j = index.get(rc)
            if j is not None:
                edges.append((i, j, 1.0))
    coords = [(c, r) for r, c in cells]
    graph = WeightedGraph.from_edges(len(cells), edges, coords if cells else None)
    return GridWorld(width, len(rows), frozenset(walls), graph, tuple(cells), name=name, **marks)


def load_gridworld(path) -> GridWorld:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read map {path}: {exc}") from exc
    return grid_from_rows(text.splitlines(), name=path.stem)


def open_grid(width: int, height: int) -> GridWorld:
    return grid_from_rows(["." * width] * height, name=f"open{width}x{height}")


def random_maze(width: int, height: int, wall_fraction: float, seed: int, name: str = "") -> GridWorld:
    """Scatter short wall segments, keeping the free cells connected.

    Walls are added one segment at a time and a segment is rejected when it
    would disconnect the free space, so the result is always a single
    connected component.
    """
    rng = np.random.default_rng(seed)
    blocked = np.zeros((height, width), dtype=bool)
    target = int(wall_fraction * width * height)
    attempts = 0
    while blocked.sum() < target and attempts < 50 * width * height:
        attempts += 1
        length = int(rng.integers(2, max(3, min(width, height) // 2 + 1)))
        horizontal = bool(rng.integers(2))
        r0, c0 = int(rng.integers(height)), int(rng.integers(width))
        seg = [(r0, c0 + i) if horizontal else (r0 + i, c0) for i in range(length)]
        seg = [(r, c) for r, c in seg if r < height and c < width and not blocked[r, c]]
        if not seg:
            continue
        for r, c in seg:
            blocked[r, c] = True
        if not _connected(blocked):
            for r, c in seg:
                blocked[r, c] = False
    rows = ["".join("#" if blocked[r, c] else "." for c in range(width)) for r in range(height)]
    return grid_from_rows(rows, name=name)


def _connected(blocked: np.ndarray) -> bool:
    free = list(zip(*np.nonzero(~blocked)))
    if not free:
        return False
    world = grid_from_rows(["".join("#" if b else "." for b in row) for row in blocked])
    return len(hop_distances(world.graph, 0)) == world.graph.n


# name -> (width, height, wall_fraction, seed); training/validation/test split
CORPUS = {
    "train8_a": (8, 8, 0.18, 11),
    "train8_b": (8, 8, 0.22, 12),
    "train8_c": (8, 8, 0.26, 13),
    "train16_a": (16, 16, 0.18, 21),
    "train16_b": (16, 16, 0.22, 22),
    "train16_c": (16, 16, 0.26, 23),
    "val8_a": (8, 8, 0.20, 31),
    "val8_b": (8, 8, 0.24, 32),
    "val8_c": (8, 8, 0.16, 33),
    "val16_a": (16, 16, 0.20, 41),
    "test32_a": (32, 32, 0.18, 51),
    "test32_b": (32, 32, 0.22, 52),
    "test32_c": (32, 32, 0.20, 53),
}


def generate_corpus(out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (w, h, frac, seed) in CORPUS.items():
        world = random_maze(w, h, frac, seed, name)
        path = out_dir / f"{name}.txt"
        path.write_text(world.render())
        written.append(path)
    return written


def builtin_map_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "maps"


def load_corpus(prefix: str, directory=None) -> list[GridWorld]:
    directory = Path(directory) if directory is not None else builtin_map_dir()
    paths = sorted(directory.glob(f"{prefix}*.txt"))
    return [load_gridworld(p) for p in paths]
