import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from deceptive_paths.graph import WeightedGraph  # noqa: E402


def random_connected_edges(rng, n, extra=None, integer_weights=False):
    """Spanning tree plus a few random chords; weights in (0.5, 3)."""
    edges = {}
    for v in range(1, n):
        u = int(rng.integers(v))
        edges[(u, v)] = None
    extra = n if extra is None else extra
    for _ in range(extra):
        u, v = sorted(int(x) for x in rng.choice(n, 2, replace=False))
        edges[(u, v)] = None
    out = []
    for u, v in sorted(edges):
        w = float(rng.integers(1, 4)) if integer_weights else float(rng.uniform(0.5, 3.0))
        out.append((u, v, w))
    return out


@st.composite
def connected_graphs(draw, min_nodes=2, max_nodes=12):
    n = draw(st.integers(min_nodes, max_nodes))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    edges = random_connected_edges(np.random.default_rng(seed), n, extra=draw(st.integers(0, n)))
    return WeightedGraph.from_edges(n, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
