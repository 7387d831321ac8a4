import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import connected_graphs
from oracles import horner_return

from deceptive_paths.deception import (RewardConfig, ambiguity_bonus, bonus_table, classical_ambiguity,
                                       classical_exaggeration, discounted_return, exaggeration_bonus,
                                       finalize_episode, metric_heatmap, step_reward)
from deceptive_paths.envs.gridworld import load_corpus, open_grid
from deceptive_paths.errors import InvalidArgumentError, InvalidConfigurationError
from deceptive_paths.graph import EpisodeContext, WeightedGraph, shortest_distances
from deceptive_paths.observer import build_observer, observer_posterior

posteriors = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5).filter(lambda p: sum(p) > 1e-6)


def test_exaggeration_extremes():
    assert exaggeration_bonus([0.0, 1.0], 0) == 1.0
    assert exaggeration_bonus([1.0, 0.0], 0) == -1.0
    assert exaggeration_bonus([0.5, 0.5], 0) == 0.0
    assert exaggeration_bonus([0.2, 0.3, 0.5], 1) == pytest.approx(0.2)


def test_single_goal_rejected():
    with pytest.raises(InvalidConfigurationError):
        exaggeration_bonus([1.0], 0)
    d = {3: np.zeros(4)}
    with pytest.raises(InvalidConfigurationError):
        ambiguity_bonus(d, [3], 0, 1)


def test_classical_metrics():
    assert classical_ambiguity([0.5, 0.5]) == 0.0
    assert classical_ambiguity([1.0, 0.0]) == 2.0
    assert classical_ambiguity([0.5, 0.5, 0.0]) == 2.0
    assert classical_exaggeration([0.0, 1.0], 0) == 0.0
    assert classical_exaggeration([1.0, 0.0], 0) == 2.0
    assert classical_exaggeration([0.5, 0.5], 0) == 1.0


@given(posteriors, st.data())
def test_exaggeration_range_and_complement(raw, data):
    p = np.array(raw) / sum(raw)
    i = data.draw(st.integers(0, len(p) - 1))
    r = exaggeration_bonus(p, i)
    assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12
    assert r == pytest.approx(1.0 - classical_exaggeration(p, i), abs=1e-15)


def line_tables(n, goals):
    g = WeightedGraph.from_edges(n, [(i, i + 1, 1.0) for i in range(n - 1)])
    return g, {x: shortest_distances(g, x) for x in goals}


def test_ambiguity_examples():
    g, d = line_tables(5, (0, 4))
    assert ambiguity_bonus(d, [0, 4], 0, 2) == 1.0
    assert ambiguity_bonus(d, [0, 4], 0, 4) == 0.0
    assert ambiguity_bonus(d, [0, 4], 0, 0) == 0.0
    # d(s,G*)=3, d(s,G)=5, d(G,G*)=4 via hand-built tables
    tables = {2: np.array([3.0, 4.0, 0.0]), 1: np.array([5.0, 0.0, 4.0])}
    assert ambiguity_bonus(tables, [2, 1], 0, 0) == 0.5


def test_ambiguity_rejects_bad_decoys():
    g = WeightedGraph.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
    d = {x: shortest_distances(g, x) for x in (0, 2)}
    with pytest.raises(InvalidConfigurationError):
        ambiguity_bonus(d, [0, 2], 0, 1, g.unreachable)
    with pytest.raises(InvalidConfigurationError):
        ambiguity_bonus({0: np.zeros(2), 1: np.zeros(2)}, [0, 1], 0, 0)


def test_ambiguity_sums_over_decoys():
    g, d = line_tables(7, (0, 3, 6))
    # node 3 is the true goal, with a decoy 3 away on each side
    vals = ambiguity_bonus(d, [0, 3, 6], 1, np.arange(7))
    np.testing.assert_allclose(vals, [0, 2 / 3, 2 / 3, 0, 2 / 3, 2 / 3, 0])
    single = [ambiguity_bonus(d, [3, x], 0, np.arange(7)) for x in (0, 6)]
    np.testing.assert_allclose(vals, single[0] + single[1])


def test_ambiguity_never_clamps_on_training_maps():
    # Triangle inequality keeps every raw term inside [0, 1].
    for world in load_corpus("train8"):
        g = world.graph
        nodes = np.arange(g.n)
        goals = [0, g.n - 1, g.n // 2]
        d = {x: shortest_distances(g, x) for x in goals}
        for decoy in goals[1:]:
            raw = 1.0 - np.abs(d[decoy] - d[goals[0]]) / d[decoy][goals[0]]
            assert raw.min() >= -1e-12 and raw.max() <= 1 + 1e-12
        assert np.all(ambiguity_bonus(d, goals, 0, nodes) <= 2.0)


def ctx_at(trajectory, goals=(9, 5), budget=4):
    ctx = EpisodeContext(trajectory[0], goals, 0, budget, trajectory=list(trajectory))
    ctx.t = len(trajectory) - 1
    return ctx


def test_step_reward_cases():
    cfg = RewardConfig()
    assert step_reward(ctx_at([0, 1, 2, 3, 4, 6]), cfg, 0.3) == -1.0       # t = 5 > 4
    assert step_reward(ctx_at([0, 1, 2, 3, 4, 9]), cfg, 0.3) == -1.0       # timeout beats goal
    assert step_reward(ctx_at([0, 1, 9]), cfg, 0.3) == 1.0
    assert step_reward(ctx_at([0, 1, 2]), cfg, 0.3) == 0.3
    assert step_reward(ctx_at([0, 1, 0]), cfg, 0.3) == 0.0
    assert step_reward(ctx_at([0, 1, 2, 1]), cfg, 0.3) == 0.0


def test_finalize_episode():
    assert finalize_episode([0.4, 0.7, -1.0], False) == [0.0, 0.0, -1.0]
    assert finalize_episode([0.4, 0.7, 1.0], True) == [0.4, 0.7, 1.0]
    assert finalize_episode([0.0, 0.0, -1.0], False) == [0.0, 0.0, -1.0]
    assert finalize_episode([], False) == []


@given(st.lists(st.floats(-1, 1), max_size=20), st.booleans())
def test_finalize_idempotent(rewards, ok):
    once = finalize_episode(rewards, ok)
    assert finalize_episode(once, ok) == once


def test_discounted_return_examples():
    assert discounted_return([0, 0, 1], 0.99) == pytest.approx(0.9801, abs=1e-15)
    assert discounted_return([], 0.9) == 0.0
    assert discounted_return([0.0] * 10, 0.9) == 0.0


@given(st.lists(st.floats(-2, 2), max_size=40), st.floats(0.01, 0.99))
def test_discounted_return_matches_horner(rewards, gamma):
    assert discounted_return(rewards, gamma) == pytest.approx(horner_return(rewards, gamma), abs=1e-9)


@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5), st.lists(st.floats(-2, 2), min_size=5, max_size=5),
       st.floats(-3, 3))
def test_discounted_return_linear(a, b, c):
    lhs = discounted_return([x + c * y for x, y in zip(a, b)], 0.9)
    rhs = discounted_return(a, 0.9) + c * discounted_return(b, 0.9)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_reward_config_validation():
    with pytest.raises(InvalidConfigurationError):
        RewardConfig(mode="sneaky")
    with pytest.raises(InvalidConfigurationError):
        RewardConfig(gamma=1.0)


def test_bonus_table_matches_pointwise():
    g = open_grid(6, 6).graph
    goals, start = [35, 5], 30
    ex = bonus_table(g, start, goals, 0, RewardConfig(mode="exaggeration"))
    post = observer_posterior(build_observer(g, goals), start, np.arange(g.n))
    for v in range(g.n):
        assert ex[v] == pytest.approx(exaggeration_bonus(post[v], 0), abs=1e-15)
    amb = bonus_table(g, start, goals, 0, RewardConfig(mode="ambiguity"))
    d = {x: shortest_distances(g, x) for x in goals}
    for v in range(g.n):
        assert amb[v] == ambiguity_bonus(d, goals, 0, v)


def test_proposed_heatmap_peaks_on_equidistant_cells():
    world = open_grid(7, 7)
    g = world.graph
    goals = [6, 42]                     # (0,6) true, (6,0) decoy
    values = metric_heatmap(g, 0, goals, 0, "proposed_ambiguity")
    d0, d1 = shortest_distances(g, 6), shortest_distances(g, 42)
    assert np.all(values[d0 == d1] == 1.0)
    assert values.max() == 1.0
    assert values[6] == 0.0 and values[42] == 0.0


def test_classical_heatmap_minimum_on_posterior_equality():
    g = open_grid(7, 7).graph
    goals = [6, 42]
    values = metric_heatmap(g, 0, goals, 0, "classical_ambiguity")
    post = observer_posterior(build_observer(g, goals), 0, np.arange(g.n))
    gap = np.abs(post[:, 0] - post[:, 1])
    interior = np.setdiff1d(np.arange(g.n), goals)
    best = interior[np.argmin(values[interior])]
    assert gap[best] == pytest.approx(gap[interior].min(), abs=1e-12)
    assert values[best] < 1e-9        # the diagonal gives exact equality on a symmetric grid


def test_heatmap_rejects_unknown_metric():
    g = open_grid(3, 3).graph
    with pytest.raises(InvalidArgumentError):
        metric_heatmap(g, 0, [8, 2], 0, "vibes")


@settings(max_examples=30, deadline=None)
@given(connected_graphs(min_nodes=3), st.integers(0, 10 ** 6))
def test_ambiguity_terms_bounded(g, seed):
    rng = np.random.default_rng(seed)
    goals = rng.choice(g.n, 2, replace=False).tolist()
    d = {x: shortest_distances(g, x) for x in goals}
    vals = ambiguity_bonus(d, goals, 0, np.arange(g.n))
    assert np.all((vals >= 0) & (vals <= 1))
