import json
import math

import numpy as np
import pytest

from deceptive_paths.deception import RewardConfig, bonus_table
from deceptive_paths.envs.gridworld import open_grid
from deceptive_paths.errors import InvalidArgumentError, SearchSpaceError
from deceptive_paths.graph import WeightedGraph, shortest_distances
from deceptive_paths.oracle import (EvalReport, brute_force_best_path, evaluate_policy, replay_return,
                                    shortest_path)
from deceptive_paths.trainer import EpisodeSpec, RandomPolicy, ShortestPathPolicy


def naive_best(graph, start, true_goal, bonus, t_max, gamma):
    """Enumerate every walk explicitly; no memoisation, no pruning beyond the horizon."""
    best = (-math.inf, None)

    def walk(path, seen, rewards):
        nonlocal best
        if len(path) - 1 >= t_max:
            return
        for v, _ in graph.neighbors(path[-1]):
            if v == true_goal:
                total = 0.0
                for r in reversed(rewards + [1.0]):
                    total = r + gamma * total
                cand = path + [v]
                if total > best[0] + 1e-12 or (abs(total - best[0]) <= 1e-12 and cand < best[1]):
                    best = (total, cand)
                continue
            walk(path + [v], seen | {v}, rewards + [0.0 if v in seen else float(bonus[v])])

    walk([start], {start}, [])
    return best


def line(n):
    return WeightedGraph.from_edges(n, [(i, i + 1, 1.0) for i in range(n - 1)])


def test_shortest_path_examples():
    assert shortest_path(line(5), 0, 4) == [0, 1, 2, 3, 4]
    g = open_grid(4, 4).graph
    p = shortest_path(g, 0, 15)
    assert len(p) - 1 == shortest_distances(g, 0)[15]
    assert p == shortest_path(g, 0, 15)
    assert p == [0, 1, 2, 3, 7, 11, 15]      # lowest-id predecessor on every tie
    with pytest.raises(InvalidArgumentError):
        shortest_path(WeightedGraph.from_edges(3, [(0, 1, 1.0)]), 0, 2)


def test_no_slack_gives_the_path():
    g = line(6)
    path, value = brute_force_best_path(g, 0, 5, [5, 2], 5, RewardConfig())
    assert path == [0, 1, 2, 3, 4, 5]
    assert value == pytest.approx(replay_return(g, path, [5, 2], 0, 5, RewardConfig()), abs=1e-12)


@pytest.mark.parametrize("mode", ["exaggeration", "ambiguity"])
def test_matches_naive_enumeration(mode):
    g = open_grid(3, 3).graph
    cfg = RewardConfig(mode=mode)
    for start, goal, decoy, t_max in [(6, 2, 0, 6), (0, 8, 6, 6), (3, 5, 1, 7), (7, 1, 8, 5)]:
        bonus = bonus_table(g, start, [goal, decoy], 0, cfg)
        path, value = brute_force_best_path(g, start, goal, [goal, decoy], t_max, cfg)
        ref_value, ref_path = naive_best(g, start, goal, bonus, t_max, cfg.gamma)
        assert value == pytest.approx(ref_value, abs=1e-12)
        assert path == ref_path
        assert value == pytest.approx(replay_return(g, path, [goal, decoy], 0, t_max, cfg), abs=1e-12)


def test_exaggeration_bends_toward_decoy():
    g = open_grid(3, 3).graph
    start, goal, decoy = 6, 8, 0          # bottom row; decoy top-left, off the direct route
    path, _ = brute_force_best_path(g, start, goal, [goal, decoy], 6, RewardConfig())
    d_decoy = shortest_distances(g, decoy)
    direct = shortest_path(g, start, goal)
    assert min(d_decoy[path]) < min(d_decoy[direct])


def test_zero_bonus_returns_a_shortest_path():
    rng = np.random.default_rng(0)
    g = open_grid(5, 5).graph
    for _ in range(5):
        start, goal, decoy = (int(x) for x in rng.choice(g.n, 3, replace=False))
        d = shortest_distances(g, goal)[start]
        path, value = brute_force_best_path(g, start, goal, [goal, decoy], int(d) + 4, RewardConfig(),
                                            bonus=np.zeros(g.n))
        assert len(path) - 1 == d
        assert value == pytest.approx(0.99 ** (d - 1))


def test_refuses_oversized_instances():
    g = open_grid(6, 6).graph
    with pytest.raises(SearchSpaceError) as info:
        brute_force_best_path(g, 0, 35, [35, 5], 20, RewardConfig())
    assert "36 nodes" in str(info.value) and "20" in str(info.value)
    with pytest.raises(InvalidArgumentError):
        brute_force_best_path(open_grid(3, 3).graph, 0, 8, [8, 2], 3, RewardConfig())
    with pytest.raises(InvalidArgumentError):
        brute_force_best_path(open_grid(3, 3).graph, 0, 8, [7, 2], 6, RewardConfig())


def test_replay_rejects_bad_walks():
    with pytest.raises(InvalidArgumentError):
        replay_return(line(4), [0, 2, 3], [3, 1], 0, 5, RewardConfig())


def specs_3x3():
    g = open_grid(3, 3).graph
    return [EpisodeSpec(g, s, (goal, decoy), t) for s, goal, decoy, t in [(6, 2, 0, 6), (0, 8, 6, 6), (3, 5, 1, 7)]]


def test_shortest_path_policy_report():
    report = evaluate_policy(ShortestPathPolicy(), specs_3x3(), RewardConfig(), greedy=True, episodes_per_spec=2)
    assert report.goal_rate == 1.0 and report.mean_path_ratio == 1.0 and report.episodes == 6
    assert len(report.rows) == 6 and len(report.trajectories) == 6


def test_no_policy_beats_the_oracle():
    cfg = RewardConfig()
    for spec in specs_3x3():
        _, best = brute_force_best_path(spec.graph, spec.start, spec.true_goal, spec.goals, spec.budget, cfg)
        for policy in (ShortestPathPolicy(), RandomPolicy()):
            report = evaluate_policy(policy, [spec], cfg, rng=np.random.default_rng(0), episodes_per_spec=20)
            assert report.mean_return <= best + 1e-9
        sp = evaluate_policy(ShortestPathPolicy(), [spec], cfg, greedy=True)
        assert sp.mean_deceptiveness <= best


def test_random_policy_report_fields(tmp_path):
    g = open_grid(5, 5).graph
    report = evaluate_policy(RandomPolicy(), [EpisodeSpec(g, 0, (24, 4), 60)], RewardConfig(),
                             rng=np.random.default_rng(1), episodes_per_spec=16)
    assert 0 <= report.goal_rate <= 1 and report.episodes == 16
    data = json.loads(report.to_json())
    assert set(data) == {"goal_rate", "mean_deceptiveness", "mean_path_ratio", "episodes", "mean_return"}
    report.write_csv(tmp_path / "r.csv")
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 17


def test_report_nan_serialises_as_null():
    assert json.loads(EvalReport(0.0, 0.0, float("nan"), 3).to_json())["mean_path_ratio"] is None


def test_evaluate_policy_argument_checks():
    with pytest.raises(InvalidArgumentError):
        evaluate_policy(RandomPolicy(), specs_3x3(), RewardConfig())
    with pytest.raises(InvalidArgumentError):
        evaluate_policy(RandomPolicy(), [], RewardConfig(), greedy=True)
    with pytest.raises(InvalidArgumentError):
        evaluate_policy(RandomPolicy(), specs_3x3(), RewardConfig(), greedy=True, episodes_per_spec=0)
