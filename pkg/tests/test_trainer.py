import numpy as np
import pytest
from scipy import stats

from oracles import adam_reference, gae_double_loop

from deceptive_paths import observer
from deceptive_paths.deception import RewardConfig
from deceptive_paths.envs.gridworld import load_corpus, open_grid
from deceptive_paths.errors import InvalidConfigurationError
from deceptive_paths.graph import WeightedGraph, shortest_distances
from deceptive_paths.policy import PolicyConfig, init_parameters
from deceptive_paths.trainer import (Adam, EpisodeSpec, GNNPolicy, RandomPolicy, ShortestPathPolicy, TrainConfig,
                                     Transition, compute_advantages, ppo_loss_grads, ppo_update, run_episode,
                                     run_episodes, sample_episode_spec, train)

SMALL = PolicyConfig(num_layers=2, hidden_dim=16)


def triangle():
    # d(0,1) = 5, d(0,2) = 4, d(1,2) = 6
    return WeightedGraph.from_edges(3, [(0, 1, 5.0), (0, 2, 4.0), (1, 2, 6.0)])


def test_config_validation():
    with pytest.raises(InvalidConfigurationError):
        TrainConfig(clip_epsilon=1.0)
    with pytest.raises(InvalidConfigurationError):
        TrainConfig(gae_lambda=1.5)
    with pytest.raises(InvalidConfigurationError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidConfigurationError):
        sample_episode_spec([], np.random.default_rng(0))


def test_budget_range_example():
    g = triangle()
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(500):
        spec = sample_episode_spec([g], rng, goal_candidates=[[1, 2]])
        assert spec.start == 0
        if spec.goals == (1, 2):
            seen.add(spec.budget)
    assert seen == {5, 6, 7, 8, 9, 10}


def test_budget_histogram_uniform():
    g = triangle()
    rng = np.random.default_rng(42)
    budgets = []
    while len(budgets) < 10_000:
        spec = sample_episode_spec([g], rng, goal_candidates=[[1, 2]])
        if spec.goals == (1, 2):
            budgets.append(spec.budget)
    counts = np.bincount(budgets, minlength=11)[5:11]
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_budget_never_below_shortest_distance():
    maps = load_corpus("train8")
    rng = np.random.default_rng(1)
    for _ in range(300):
        spec = sample_episode_spec(maps, rng)
        d = shortest_distances(spec.graph, spec.true_goal)
        assert spec.budget >= d[spec.start]
        assert spec.start not in spec.goals and spec.goals[0] != spec.goals[1]


def test_start_at_goal_ends_immediately():
    g = open_grid(4, 4).graph
    spec = EpisodeSpec(g, 5, (5, 10), 6)
    ep = run_episode(g, spec, init_parameters(SMALL, 0), RewardConfig(), np.random.default_rng(0))
    assert ep.rewards == [1.0] and ep.reached_goal and ep.trajectory == [5] and ep.transitions == []


def test_episode_contract_and_determinism():
    maps = load_corpus("train8")
    params = init_parameters(SMALL, 3)
    for i in range(10):
        spec = sample_episode_spec(maps, np.random.default_rng([9, i]))
        a = run_episode(spec.graph, spec, params, RewardConfig(), np.random.default_rng(i))
        b = run_episode(spec.graph, spec, params, RewardConfig(), np.random.default_rng(i))
        assert a.trajectory == b.trajectory and a.rewards == b.rewards
        for u, v in zip(a.trajectory, a.trajectory[1:]):
            assert spec.graph.has_edge(u, v)
        assert a.steps <= spec.budget + 1
        assert all(t.log_prob <= 0 for t in a.transitions)
        assert len(a.transitions) == len(a.rewards)
        assert a.transitions[-1].done and not any(t.done for t in a.transitions[:-1])
        if not a.reached_goal:
            assert a.rewards[-1] == -1.0 and all(r == 0 for r in a.rewards[:-1])


def test_batching_does_not_change_episodes():
    maps = load_corpus("train8")
    params = init_parameters(SMALL, 3)
    specs = [sample_episode_spec(maps, np.random.default_rng([4, i])) for i in range(6)]
    together = run_episodes(specs, GNNPolicy(params), RewardConfig(), [np.random.default_rng(i) for i in range(6)])
    for i, spec in enumerate(specs):
        alone = run_episode(spec.graph, spec, params, RewardConfig(), np.random.default_rng(i))
        assert alone.trajectory == together[i].trajectory


def test_shortest_path_policy_is_optimal():
    maps = load_corpus("train8")
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = sample_episode_spec(maps, rng)
        ep = run_episodes([spec], ShortestPathPolicy(), RewardConfig(), None, greedy=True)[0]
        assert ep.reached_goal
        assert ep.path_length == shortest_distances(spec.graph, spec.true_goal)[spec.start]


def test_random_policy_runs():
    g = open_grid(5, 5).graph
    spec = EpisodeSpec(g, 0, (24, 4), 10)
    ep = run_episodes([spec], RandomPolicy(), RewardConfig(mode="ambiguity"), [np.random.default_rng(1)])[0]
    assert 1 <= ep.steps <= 11


def test_observer_tables_not_recomputed_per_episode():
    g = open_grid(6, 6).graph
    spec = EpisodeSpec(g, 0, (35, 5), 15)
    params = init_parameters(SMALL, 0)
    run_episode(g, spec, params, RewardConfig(), np.random.default_rng(0))
    before = observer.value_iteration_calls()
    for i in range(3):
        run_episode(g, spec, params, RewardConfig(), np.random.default_rng(i))
    assert observer.value_iteration_calls() == before


def fake_transitions(rewards, values, dones):
    return [Transition(None, None, 0, 0, 0.0, r, v, d) for r, v, d in zip(rewards, values, dones)]


def test_gae_lambda_zero_is_td_error():
    r, v, d = [0.1, 0.2, 1.0], [0.5, 0.4, 0.3], [False, False, True]
    adv, targets = compute_advantages(fake_transitions(r, v, d), 0.9, 0.0, normalize=False)
    np.testing.assert_allclose(adv, [0.1 + 0.9 * 0.4 - 0.5, 0.2 + 0.9 * 0.3 - 0.4, 1.0 - 0.3], atol=1e-15)
    np.testing.assert_allclose(targets, adv + np.array(v), atol=1e-15)


def test_gae_lambda_one_zero_values_is_reward_to_go():
    r = [0.0, 0.5, -1.0, 0.2, 1.0]
    d = [False, False, True, False, True]
    adv, _ = compute_advantages(fake_transitions(r, [0.0] * 5, d), 0.9, 1.0, normalize=False)
    np.testing.assert_allclose(adv, [0.5 * 0.9 - 0.81, 0.5 - 0.9, -1.0, 0.2 + 0.9, 1.0], atol=1e-15)


def test_gae_matches_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        r = rng.normal(size=n).tolist()
        v = rng.normal(size=n + 1).tolist()
        d = (rng.random(n) < 0.2).tolist()
        d[-1] = True
        adv, _ = compute_advantages(fake_transitions(r, v[:n], d), 0.99, 0.95, normalize=False)
        np.testing.assert_allclose(adv, gae_double_loop(r, v, d, 0.99, 0.95), atol=1e-10)


def test_gae_normalisation():
    rng = np.random.default_rng(2)
    tr = fake_transitions(rng.normal(size=30), rng.normal(size=30), [i % 7 == 6 for i in range(30)])
    adv, _ = compute_advantages(tr, 0.99, 0.95)
    assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1) < 1e-6
    single, _ = compute_advantages(tr[:1], 0.99, 0.95)
    assert single[0] == compute_advantages(tr[:1], 0.99, 0.95, normalize=False)[0][0]


def test_adam_matches_closed_form():
    params = init_parameters(PolicyConfig(num_layers=1, hidden_dim=3), 0)
    target = {k: np.full_like(v, 0.3) for k, v in params.arrays.items()}
    start = params.copy()
    opt = Adam(learning_rate=0.05, weight_decay=0.1)
    fed = []
    for _ in range(5):
        grads = {k: params[k] - target[k] for k in params.names()}      # quadratic toy loss
        fed.append({k: g.copy() for k, g in grads.items()})
        opt.step(params, grads)
    for name in ("input.W", "layer0.b", "policy.b"):
        for idx in list(np.ndindex(params[name].shape))[:3]:
            wd = 0.1 if params.is_weight(name) else 0.0
            expect = adam_reference(start[name][idx], [f[name][idx] for f in fed], 0.05, wd)
            assert abs(params[name][idx] - expect) < 1e-12


def collect(params, n=8, seed=0):
    maps = load_corpus("train8")
    rngs = [np.random.default_rng([seed, i]) for i in range(n)]
    specs = [sample_episode_spec(maps, r) for r in rngs]
    eps = run_episodes(specs, GNNPolicy(params), RewardConfig(), rngs)
    return [t for e in eps for t in e.transitions]


def test_zero_epochs_leave_params_unchanged():
    params = init_parameters(SMALL, 0)
    new, summary = ppo_update(params, collect(params), TrainConfig(epochs_per_batch=0))
    for name in params.names():
        np.testing.assert_array_equal(new[name], params[name])
    assert summary["first_ratio"] == 1.0


def test_first_minibatch_ratios_are_one():
    params = init_parameters(SMALL, 0)
    _, summary = ppo_update(params, collect(params), TrainConfig(epochs_per_batch=1))
    assert abs(summary["first_ratio"] - 1.0) < 1e-12


def test_update_improves_surrogate():
    params = init_parameters(SMALL, 1)
    batch = collect(params, n=4)
    cfg = TrainConfig(entropy_coef=0.0, value_coef=0.0, clip_epsilon=0.99, epochs_per_batch=1,
                      minibatch_size=len(batch), learning_rate=1e-3, weight_decay=0.0, grad_clip_norm=1e9)
    adv, targets = compute_advantages(batch, cfg.gamma, cfg.gae_lambda)
    _, before = ppo_loss_grads(params, batch, adv, targets, cfg)
    new, _ = ppo_update(params, batch, cfg, advantages=adv, targets=targets)
    _, after = ppo_loss_grads(new, batch, adv, targets, cfg)
    assert after["policy_loss"] < before["policy_loss"]


def tiny_train(tmp_path, name, total=128, resume=None):
    cfg = TrainConfig(total_episodes=total, episodes_per_batch=64, eval_every=64, eval_episodes=8,
                      checkpoint_every=64, seed=3)
    return train(load_corpus("train8"), cfg, RewardConfig(mode="ambiguity"), SMALL,
                 eval_set=load_corpus("val8"), out_dir=tmp_path / name, resume_from=resume)


def test_train_writes_metrics_and_is_deterministic(tmp_path):
    a = tiny_train(tmp_path, "a")
    b = tiny_train(tmp_path, "b")
    rows = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    assert rows[0] == "episode,goal_rate,mean_deception,policy_loss,value_loss,entropy"
    assert len(rows) - 1 == len(a.metrics) == 2
    assert all(0 <= r["goal_rate"] <= 1 for r in a.metrics)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    for name in a.params.names():
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_resume_matches_uninterrupted_run(tmp_path):
    full = tiny_train(tmp_path, "full", total=128)
    tiny_train(tmp_path, "half", total=64)
    resumed = tiny_train(tmp_path, "half", total=128, resume=tmp_path / "half" / "checkpoint.bin")
    assert resumed.episodes == 128
    for name in full.params.names():
        np.testing.assert_array_equal(full.params[name], resumed.params[name])
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "half" / "metrics.csv").read_bytes()
