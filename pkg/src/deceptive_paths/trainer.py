"""Episode sampling, rollouts, advantage estimation and PPO training."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .deception import RewardConfig, bonus_table, finalize_episode, step_reward
from .errors import InvalidConfigurationError, NumericError
from .graph import EpisodeContext, WeightedGraph, attribute_matrix, k_hop_neighborhood, shortest_distances
from .policy import (GraphBatch, PolicyConfig, PolicyOutput, PolicyParameters, backward_batch,
                     forward_batch, init_parameters, read_checkpoint, sample_action, save_parameters)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("episode", "goal_rate", "mean_deception", "policy_loss", "value_loss", "entropy")


@dataclass(frozen=True)
class TrainConfig:
    total_episodes: int = 98304
    gamma: float = 0.99
    learning_rate: float = 4e-4
    weight_decay: float = 4e-4
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    epochs_per_batch: int = 4
    episodes_per_batch: int = 256
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_clip_norm: float = 0.5
    seed: int = 0
    eval_every: int = 2048
    eval_episodes: int = 64
    checkpoint_every: int = 0

    def __post_init__(self):
        positive = ("total_episodes", "gamma", "learning_rate", "episodes_per_batch", "minibatch_size",
                    "grad_clip_norm")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidConfigurationError(f"{name} must be positive")
        if not 0 < self.clip_epsilon < 1:
            raise InvalidConfigurationError("clip_epsilon must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise InvalidConfigurationError("gae_lambda must lie in [0, 1]")
        for name in ("weight_decay", "value_coef", "entropy_coef", "epochs_per_batch"):
            if getattr(self, name) < 0:
                raise InvalidConfigurationError(f"{name} must be non-negative")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigurationError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EpisodeSpec:
    graph: WeightedGraph
    start: int
    goals: tuple            # true goal first
    budget: float
    true_goal_index: int = 0
    name: str = ""

    @property
    def true_goal(self) -> int:
        return self.goals[self.true_goal_index]

    def context(self) -> EpisodeContext:
        return EpisodeContext(self.start, self.goals, self.true_goal_index, self.budget)


@dataclass
class Transition:
    subgraph: WeightedGraph
    attributes: np.ndarray
    agent: int              # local id of the agent node inside ``subgraph``
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool


@dataclass
class Episode:
    spec: EpisodeSpec
    trajectory: list
    rewards: list
    reached_goal: bool
    transitions: list = field(default_factory=list)

    @property
    def deceptiveness(self) -> float:
        """Sum of finalised deception bonuses (terminal goal reward excluded)."""
        return float(sum(self.rewards[:-1])) if self.reached_goal else 0.0

    @property
    def path_length(self) -> float:
        g = self.spec.graph
        return float(sum(g.weight(u, v) for u, v in zip(self.trajectory, self.trajectory[1:])))

    @property
    def steps(self) -> int:
        return len(self.trajectory) - 1


def sample_episode_spec(training_set: Sequence, rng, goal_candidates=None, max_retries: int = 1000) -> EpisodeSpec:
    """Uniform map, start, and (true, decoy) pair; integer budget uniform on
    ``[d(s1, G*), d(s1, G) + d(G, G*)]``."""
    if not training_set:
        raise InvalidConfigurationError("training set is empty")
    for _ in range(max_retries):
        gi = int(rng.integers(len(training_set)))
        item = training_set[gi]
        graph = getattr(item, "graph", item)
        name = getattr(item, "name", str(gi))
        if graph.n < 3:
            continue
        start = int(rng.integers(graph.n))
        pool = np.arange(graph.n) if goal_candidates is None else np.asarray(goal_candidates[gi])
        true_goal, decoy = (int(x) for x in rng.choice(pool, size=2, replace=False))
        if start in (true_goal, decoy):
            continue
        d_true = shortest_distances(graph, true_goal)
        d_decoy = shortest_distances(graph, decoy)
        lo, hi = d_true[start], d_decoy[start] + d_decoy[true_goal]
        if max(lo, hi) >= graph.unreachable:
            continue
        lo_i = int(math.ceil(lo - 1e-9))
        hi_i = max(lo_i, int(math.floor(hi + 1e-9)))
        budget = int(rng.integers(lo_i, hi_i + 1))
        return EpisodeSpec(graph, start, (true_goal, decoy), budget, 0, name)
    raise InvalidConfigurationError(f"no reachable episode found in {max_retries} draws")


class _Runner:
    """One episode's mutable state while rolling out."""

    def __init__(self, spec: EpisodeSpec, reward_config: RewardConfig, policy_config: PolicyConfig):
        self.spec = spec
        self.ctx = spec.context()
        self.reward_config = reward_config
        self.k = policy_config.num_layers
        self.scaling = policy_config.attribute_scaling
        self.dist = {g: shortest_distances(spec.graph, g) for g in spec.goals}
        self.bonus = bonus_table(spec.graph, spec.start, spec.goals, spec.true_goal_index, reward_config)
        self.rewards = []
        self.transitions = []
        self.done = spec.start == spec.true_goal
        self.reached = self.done
        if self.done:
            self.rewards.append(reward_config.goal_reward)

    def observe(self):
        hood = k_hop_neighborhood(self.spec.graph, self.ctx.position, self.k)
        x = attribute_matrix(self.spec.graph, self.ctx, hood.nodes, self.dist, self.scaling)
        self.hood = hood
        return hood.graph, x, hood.center

    def act(self, x, out: PolicyOutput, index: int, log_prob: float, record: bool):
        node = int(self.hood.nodes[self.hood.graph.nbr[self.hood.center, index]])
        self.ctx.move(node)
        r = step_reward(self.ctx, self.reward_config, self.bonus[node])
        timeout = self.ctx.t > self.ctx.budget
        reached = (not timeout) and node == self.spec.true_goal
        self.ctx.t += 1
        self.done = timeout or reached
        self.reached = reached
        self.rewards.append(r)
        if record:
            self.transitions.append(Transition(self.hood.graph, x, self.hood.center, index, log_prob, r,
                                               float(out.value), self.done))

    def finish(self) -> Episode:
        rewards = finalize_episode(self.rewards, self.reached)
        for tr, r in zip(self.transitions, rewards):
            tr.reward = r
        return Episode(self.spec, list(self.ctx.trajectory), rewards, self.reached, self.transitions)


class GNNPolicy:
    """Adapter that evaluates a parameter set on many observations at once."""

    def __init__(self, params: PolicyParameters, sampling_rng=None):
        self.params = params
        self.config = params.config
        # Only used when the config caps sampled neighbours.
        self.sampling_rng = sampling_rng

    def evaluate(self, observations) -> list[PolicyOutput]:
        batch = GraphBatch(observations, self.config.input_dim, self.config.neighbor_sample_cap,
                           self.sampling_rng)
        logits, values, _ = forward_batch(self.params, batch)
        return [PolicyOutput(l, float(v)) for l, v in zip(batch.split(logits), values)]


class ShortestPathPolicy:
    """Deterministic baseline: step to the neighbour minimising edge weight + d(·, G*)."""

    config = PolicyConfig(num_layers=1)

    def evaluate(self, observations) -> list[PolicyOutput]:
        outs = []
        for g, x, agent in observations:
            row = g.nbr[agent][g.nbr[agent] >= 0]
            cost = g.nbr_w[agent][:len(row)] + x[row, 1]
            logits = np.where(cost <= cost.min() + 1e-9, 0.0, -1e3)
            outs.append(PolicyOutput(logits, 0.0))
        return outs


class RandomPolicy:
    config = PolicyConfig(num_layers=1)

    def evaluate(self, observations) -> list[PolicyOutput]:
        return [PolicyOutput(np.zeros(int(g.degree[a])), 0.0) for g, _, a in observations]


def run_episodes(specs: Sequence[EpisodeSpec], policy, reward_config: RewardConfig, rngs,
                 greedy: bool = False, record: bool = True, max_steps: int | None = None) -> list[Episode]:
    """Roll out several episodes in lockstep so the policy sees one batch per step.

    Each episode draws actions from its own generator in ``rngs``, so results
    do not depend on how episodes are grouped.
    """
    runners = [_Runner(s, reward_config, policy.config) for s in specs]
    steps = 0
    while True:
        active = [i for i, r in enumerate(runners) if not r.done]
        if not active or (max_steps is not None and steps >= max_steps):
            break
        obs = [runners[i].observe() for i in active]
        outs = policy.evaluate(obs)
        for i, o, out in zip(active, obs, outs):
            index, logp = sample_action(out, None if greedy else rngs[i], greedy)
            runners[i].act(o[1], out, index, logp, record)
        steps += 1
    return [r.finish() for r in runners]


def run_episode(graph: WeightedGraph, spec: EpisodeSpec, params, reward_config: RewardConfig, rng,
                greedy: bool = False) -> Episode:
    policy = GNNPolicy(params) if isinstance(params, PolicyParameters) else params
    if spec.graph is not graph:
        spec = replace(spec, graph=graph)
    return run_episodes([spec], policy, reward_config, [rng], greedy)[0]


def compute_advantages(transitions: Sequence[Transition], gamma: float, gae_lambda: float,
                       normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """GAE over a flat list of transitions (episodes delimited by ``done``).

    Returns ``(advantages, return_targets)``; targets use the unnormalised
    advantages.
    """
    n = len(transitions)
    adv = np.zeros(n)
    running = 0.0
    for i in reversed(range(n)):
        tr = transitions[i]
        next_value = 0.0 if tr.done or i + 1 == n else transitions[i + 1].value
        if tr.done:
            running = 0.0
        delta = tr.reward + gamma * next_value - tr.value
        running = delta + gamma * gae_lambda * running
        adv[i] = running
    values = np.array([tr.value for tr in transitions])
    targets = adv + values
    if normalize and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, targets


class Adam:
    """Adam with decoupled weight decay applied to weight arrays only."""

    def __init__(self, learning_rate=4e-4, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: PolicyParameters, grads: dict) -> None:
        self.t += 1
        b1, b2, lr = self.beta1, self.beta2, self.learning_rate
        for name, p in params.arrays.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            if self.weight_decay and params.is_weight(name):
                p *= 1 - lr * self.weight_decay
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays: dict, t: int) -> None:
        self.t = int(t)
        for key, arr in arrays.items():
            kind, name = key[len("adam."):].split(".", 1)
            getattr(self, kind)[name] = np.array(arr, dtype=np.float64)


def ppo_loss_grads(params: PolicyParameters, transitions: Sequence[Transition], advantages, targets,
                   config: TrainConfig):
    """Clipped-surrogate loss, its gradients, and diagnostics for one minibatch."""
    batch = GraphBatch([(t.subgraph, t.attributes, t.agent) for t in transitions], params.config.input_dim,
                       params.config.neighbor_sample_cap)
    logits, values, trace = forward_batch(params, batch)
    B = len(transitions)
    eps = config.clip_epsilon
    dlogits = np.zeros_like(logits)
    policy_loss = entropy_sum = 0.0
    ratios = np.empty(B)
    clipped = 0
    for i, tr in enumerate(transitions):
        lo, hi = batch.action_offsets[i], batch.action_offsets[i + 1]
        z = logits[lo:hi] - logits[lo:hi].max()
        logp = z - np.log(np.exp(z).sum())
        prob = np.exp(logp)
        ratio = math.exp(logp[tr.action] - tr.log_prob)
        ratios[i] = ratio
        a = advantages[i]
        unclipped, clip_term = ratio * a, min(max(ratio, 1 - eps), 1 + eps) * a
        policy_loss -= min(unclipped, clip_term)
        if unclipped <= clip_term:
            coeff = -a * ratio / B
            grad = -prob * coeff
            grad[tr.action] += coeff
            dlogits[lo:hi] += grad
        else:
            clipped += 1
        ent = -float(prob @ logp)
        entropy_sum += ent
        dlogits[lo:hi] += config.entropy_coef / B * prob * (logp + ent)
    value_err = values - np.asarray(targets)
    value_loss = float(np.mean(value_err ** 2))
    dvalues = 2.0 * config.value_coef * value_err / B
    policy_loss /= B
    entropy = entropy_sum / B
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    if not math.isfinite(loss):
        raise NumericError(f"non-finite PPO loss (policy {policy_loss}, value {value_loss})", name="loss")
    grads = backward_batch(params, batch, trace, dlogits, dvalues)
    stats = {"loss": loss, "policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy,
             "mean_ratio": float(ratios.mean()), "clip_fraction": clipped / B}
    return grads, stats


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def ppo_update(params: PolicyParameters, batch: Sequence[Transition], config: TrainConfig,
               optimizer: Adam | None = None, rng=None, advantages=None, targets=None):
    """Several epochs of minibatch PPO on a collected batch; returns ``(new_params, stats)``."""
    params = params.copy()
    if optimizer is None:
        optimizer = Adam(config.learning_rate, config.weight_decay)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if advantages is None:
        advantages, targets = compute_advantages(batch, config.gamma, config.gae_lambda)
    n = len(batch)
    history = []
    first_ratios = None
    for _ in range(config.epochs_per_batch):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            idx = order[lo:lo + config.minibatch_size]
            grads, stats = ppo_loss_grads(params, [batch[i] for i in idx], advantages[idx], targets[idx], config)
            if first_ratios is None:
                first_ratios = stats["mean_ratio"]
            stats["grad_norm"] = clip_gradients(grads, config.grad_clip_norm)
            optimizer.step(params, grads)
            history.append(stats)
    if not history:
        return params, {"mean_ratio": 1.0, "clip_fraction": 0.0, "policy_loss": 0.0, "value_loss": 0.0,
                        "entropy": 0.0, "first_ratio": 1.0}
    summary = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    summary["first_ratio"] = first_ratios
    return params, summary


@dataclass
class TrainResult:
    params: PolicyParameters
    metrics: list
    optimizer: Adam
    episodes: int


def _write_metrics(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(row[k])) if k != "episode" else int(row[k]) for k in METRIC_FIELDS})


def held_out_specs(maps: Sequence, count: int, seed: int, budget_factor: float = 1.5) -> list[EpisodeSpec]:
    """Evaluation specs with ``T_max = floor(budget_factor * d(s1, G*))``."""
    rng = np.random.default_rng([seed, 7919])
    specs = []
    while len(specs) < count:
        spec = sample_episode_spec(maps, rng)
        d = shortest_distances(spec.graph, spec.true_goal)[spec.start]
        specs.append(replace(spec, budget=int(math.floor(budget_factor * d + 1e-9))))
    return specs


def evaluate_greedy(params: PolicyParameters, specs, reward_config: RewardConfig) -> tuple[float, float]:
    eps = run_episodes(specs, GNNPolicy(params), reward_config, None, greedy=True, record=False)
    return (float(np.mean([e.reached_goal for e in eps])), float(np.mean([e.deceptiveness for e in eps])))


def train(training_set: Sequence, train_config: TrainConfig, reward_config: RewardConfig,
          policy_config: PolicyConfig, eval_set: Sequence | None = None, out_dir=None,
          resume_from=None, progress: Callable | None = None) -> TrainResult:
    """Full PPO loop: sample specs, roll out a batch, update, evaluate, log.

    Every episode ``i`` draws its spec and actions from
    ``default_rng([seed, i])``, which makes single-process runs bit-reproducible
    and resumable from any checkpoint boundary.
    """
    cfg = train_config
    if abs(cfg.gamma - reward_config.gamma) > 0:
        reward_config = replace(reward_config, gamma=cfg.gamma)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    params = init_parameters(policy_config, cfg.seed)
    optimizer = Adam(cfg.learning_rate, cfg.weight_decay)
    metrics, done = [], 0
    if resume_from is not None:
        params, extra, meta = read_checkpoint(resume_from, policy_config)
        state = meta.get("train_state", {})
        optimizer.load_state({k: v for k, v in extra.items() if k.startswith("adam.")}, state.get("adam_t", 0))
        done = int(state.get("episodes", 0))
        metrics = list(state.get("metrics", []))
    eval_specs = held_out_specs(eval_set or training_set, cfg.eval_episodes, cfg.seed)
    last_stats = {"policy_loss": float("nan"), "value_loss": float("nan"), "entropy": float("nan")}
    next_eval = (done // cfg.eval_every + 1) * cfg.eval_every if cfg.eval_every else None
    batch_index = done // cfg.episodes_per_batch
    while done < cfg.total_episodes:
        count = min(cfg.episodes_per_batch, cfg.total_episodes - done)
        rngs = [np.random.default_rng([cfg.seed, done + i]) for i in range(count)]
        specs = [sample_episode_spec(training_set, r) for r in rngs]
        episodes = run_episodes(specs, GNNPolicy(params), reward_config, rngs)
        transitions = [t for e in episodes for t in e.transitions]
        if transitions:
            update_rng = np.random.default_rng([cfg.seed, batch_index, 1])
            params, last_stats = ppo_update(params, transitions, cfg, optimizer, update_rng)
        done += count
        batch_index += 1
        if progress is not None:
            progress(done, episodes, last_stats)
        if next_eval is not None and (done >= next_eval or done >= cfg.total_episodes):
            goal_rate, deception = evaluate_greedy(params, eval_specs, reward_config)
            row = {"episode": done, "goal_rate": goal_rate, "mean_deception": deception,
                   "policy_loss": last_stats["policy_loss"], "value_loss": last_stats["value_loss"],
                   "entropy": last_stats["entropy"]}
            metrics.append(row)
            log.info("episode %d goal_rate %.3f deception %.3f", done, goal_rate, deception)
            while next_eval <= done:
                next_eval += cfg.eval_every
            if out_dir is not None:
                _write_metrics(out_dir / "metrics.csv", metrics)
        if out_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_training_checkpoint(out_dir / "checkpoint.bin", params, optimizer, done, metrics,
                                     cfg, reward_config)
    if out_dir is not None:
        _write_metrics(out_dir / "metrics.csv", metrics)
        save_training_checkpoint(out_dir / "checkpoint.bin", params, optimizer, done, metrics, cfg, reward_config)
    return TrainResult(params, metrics, optimizer, done)


def save_training_checkpoint(path, params, optimizer: Adam, episodes: int, metrics, cfg: TrainConfig,
                             reward_config: RewardConfig) -> None:
    meta = {"train_state": {"episodes": episodes, "adam_t": optimizer.t, "metrics": metrics},
            "train_config": asdict(cfg), "reward_config": asdict(reward_config)}
    save_parameters(path, params, optimizer.state_arrays(), meta)
