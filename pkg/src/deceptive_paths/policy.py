"""GraphSAGE (max-pool) policy/value network with hand-written reverse mode.

Row-vector convention throughout: a layer computes ``h @ W + b``. Several
subgraphs are evaluated at once by packing them into one disjoint union
(:class:`GraphBatch`); a single subgraph is just a batch of one.

Per layer::

    p_v     = max_{u in N(v)} relu(h_u @ W_pool + b_pool)     (0 if N(v) empty)
    h'_v    = relu(h_v @ W_self + p_v @ W_neigh + b)

Edge logits are a linear readout of the final embedding of each candidate
neighbour of the agent; the value is a linear readout of the agent's own
final embedding.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CheckpointError, InvalidConfigurationError, NoActionError, NumericError
from .graph import WeightedGraph, hop_distances

FORMAT_VERSION = 1
MAGIC = b"DPPGNN\x00\x01"


@dataclass(frozen=True)
class PolicyConfig:
    num_layers: int = 4
    hidden_dim: int = 64
    input_dim: int = 4
    neighbor_sample_cap: int | None = None
    attribute_scaling: str = "raw"        # raw | normalized | shared

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.input_dim < 3:
            raise InvalidConfigurationError(f"invalid policy config {self}")
        if self.neighbor_sample_cap is not None and self.neighbor_sample_cap < 1:
            raise InvalidConfigurationError("neighbor_sample_cap must be positive")
        if self.attribute_scaling not in ("raw", "normalized", "shared"):
            raise InvalidConfigurationError(f"unknown attribute_scaling {self.attribute_scaling!r}")


def parameter_shapes(config: PolicyConfig) -> dict[str, tuple]:
    h = config.hidden_dim
    shapes = {"input.W": (config.input_dim, h), "input.b": (h,)}
    for layer in range(config.num_layers):
        shapes[f"layer{layer}.W_pool"] = (h, h)
        shapes[f"layer{layer}.b_pool"] = (h,)
        shapes[f"layer{layer}.W_self"] = (h, h)
        shapes[f"layer{layer}.W_neigh"] = (h, h)
        shapes[f"layer{layer}.b"] = (h,)
    shapes.update({"policy.w": (h,), "policy.b": (), "value.w": (h,), "value.b": ()})
    return shapes


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


class PolicyParameters:
    """Named float64 arrays plus the architecture that gives them meaning."""

    def __init__(self, config: PolicyConfig, arrays: dict):
        shapes = parameter_shapes(config)
        if set(arrays) != set(shapes):
            raise InvalidConfigurationError("parameter names do not match the configuration")
        self.config = config
        self.arrays = {}
        for name, shape in shapes.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
            self.arrays[name] = arr

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def is_weight(self, name: str) -> bool:
        return not _is_bias(name)


def init_parameters(config: PolicyConfig, seed: int) -> PolicyParameters:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in parameter_shapes(config).items():
        if _is_bias(name):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            fan_out = shape[1] if len(shape) > 1 else 1
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return PolicyParameters(config, arrays)


class PolicyOutput(NamedTuple):
    logits: np.ndarray      # one entry per incident edge, sorted-neighbour order
    value: float


class GraphBatch:
    """Disjoint union of subgraphs with per-node attributes.

    ``items`` is a sequence of ``(subgraph, attributes, agent_local_id)``.
    """

    def __init__(self, items: Sequence[tuple[WeightedGraph, np.ndarray, int]], input_dim: int,
                 neighbor_sample_cap: int | None = None, rng=None):
        sizes = [g.n for g, _, _ in items]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        width = max([g.nbr.shape[1] for g, _, _ in items] + [1])
        if neighbor_sample_cap is not None:
            width = min(width, neighbor_sample_cap)
        n = int(offsets[-1])
        X = np.empty((n, input_dim))
        nbr = np.full((n, width), -1, dtype=np.int64)
        agents = np.empty(len(items), dtype=np.int64)
        hop = np.empty(n, dtype=np.int64)
        action_nodes, action_counts = [], []
        for i, (g, x, agent) in enumerate(items):
            x = np.asarray(x, dtype=float)
            if x.shape != (g.n, input_dim):
                raise InvalidConfigurationError(
                    f"attributes have shape {x.shape}, expected {(g.n, input_dim)}")
            lo = offsets[i]
            X[lo:lo + g.n] = x
            local = g.nbr
            if neighbor_sample_cap is not None and local.shape[1] > neighbor_sample_cap:
                local = _sample_neighbors(g, neighbor_sample_cap, rng)
            k = min(local.shape[1], width)
            nbr[lo:lo + g.n, :k] = np.where(local[:, :k] >= 0, local[:, :k] + lo, -1)
            if g.degree[agent] == 0:
                raise NoActionError(f"agent node {agent} has no incident edges")
            agents[i] = lo + agent
            hop[lo:lo + g.n] = _hops(g, agent)
            row = g.nbr[agent]
            action_nodes.append(row[row >= 0] + lo)
            action_counts.append(int(g.degree[agent]))
        self.X = X
        self.nbr = nbr
        self.agents = agents
        self.hop = hop
        self.action_nodes = np.concatenate(action_nodes)
        self.action_offsets = np.concatenate([[0], np.cumsum(action_counts)]).astype(np.int64)
        self.size = len(items)

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        o = self.action_offsets
        return [flat[o[i]:o[i + 1]] for i in range(self.size)]


def _hops(g: WeightedGraph, agent: int) -> np.ndarray:
    key = ("hops", int(agent))
    out = g._cache.get(key)
    if out is None:
        out = np.full(g.n, np.iinfo(np.int64).max // 2, dtype=np.int64)
        for v, d in hop_distances(g, agent).items():
            out[v] = d
        g._cache[key] = out
    return out


def _sample_neighbors(g: WeightedGraph, cap: int, rng) -> np.ndarray:
    # Memoised per subgraph so a rollout and the later update see the same sample.
    key = ("sampled", cap)
    hit = g._cache.get(key)
    if hit is not None:
        return hit
    if rng is None:
        rng = np.random.default_rng(0)
    out = np.full((g.n, cap), -1, dtype=np.int64)
    for v in range(g.n):
        row = g.nbr[v][g.nbr[v] >= 0]
        if len(row) > cap:
            row = np.sort(rng.choice(row, size=cap, replace=False))
        out[v, :len(row)] = row
    g._cache[key] = out
    return out


class _Layer(NamedTuple):
    src: np.ndarray         # rows whose messages are needed
    act: np.ndarray         # rows whose embeddings are updated
    h_src: np.ndarray
    h_act: np.ndarray
    pre_pool: np.ndarray    # over src rows
    nbr: np.ndarray         # act rows' neighbours as positions in src (len(src) = padding)
    has: np.ndarray
    arg: np.ndarray
    pooled: np.ndarray
    pre: np.ndarray         # over act rows


class _Trace(NamedTuple):
    layers: list
    final: np.ndarray


def _max_pool(msg, slots):
    """Elementwise max over neighbour slots.

    ``slots`` indexes rows of ``msg``; the value ``len(msg)`` marks padding.
    Strict ``>`` keeps the lowest slot on ties.
    """
    pad = np.vstack([msg, np.full((1, msg.shape[1]), -1.0)])
    pooled = pad[slots[:, 0]]
    arg = np.zeros(pooled.shape, dtype=np.int64)
    for j in range(1, slots.shape[1]):
        cand = pad[slots[:, j]]
        arg[cand > pooled] = j
        np.maximum(pooled, cand, out=pooled)
    return pooled, arg


def _embed(params: PolicyParameters, batch: GraphBatch) -> _Trace:
    # Layer l only has to produce embeddings within K - l hops of an agent;
    # farther rows cannot reach the readouts, so they are skipped exactly.
    p = params.arrays
    K = params.config.num_layers
    n = batch.X.shape[0]
    h = batch.X @ p["input.W"] + p["input.b"]
    layers = []
    pos = np.empty(n, dtype=np.int64)
    for layer in range(K):
        src = np.flatnonzero(batch.hop <= K - layer + 1)
        act = np.flatnonzero(batch.hop <= K - layer)
        pos[src] = np.arange(len(src))
        h_src, h_act = h[src], h[act]
        pre_pool = h_src @ p[f"layer{layer}.W_pool"] + p[f"layer{layer}.b_pool"]
        msg = np.maximum(pre_pool, 0.0)
        raw = batch.nbr[act]
        mask = raw >= 0
        local = np.where(mask, pos[np.where(mask, raw, 0)], len(src))
        has = mask.any(axis=1)
        pooled, arg = _max_pool(msg, local)
        pooled[~has] = 0.0
        pre = h_act @ p[f"layer{layer}.W_self"] + pooled @ p[f"layer{layer}.W_neigh"] + p[f"layer{layer}.b"]
        layers.append(_Layer(src, act, h_src, h_act, pre_pool, local, has, arg, pooled, pre))
        h = np.zeros((n, h.shape[1]))
        h[act] = np.maximum(pre, 0.0)
    return _Trace(layers, h)


def forward_batch(params: PolicyParameters, batch: GraphBatch):
    """Returns ``(flat_logits, values, trace)``; split logits with ``batch.split``."""
    trace = _embed(params, batch)
    p = params.arrays
    logits = trace.final[batch.action_nodes] @ p["policy.w"] + p["policy.b"]
    values = trace.final[batch.agents] @ p["value.w"] + p["value.b"]
    return logits, values, trace


def backward_batch(params: PolicyParameters, batch: GraphBatch, trace: _Trace,
                   dlogits: np.ndarray, dvalues: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its derivatives w.r.t. logits and values.

    Max-pool routes each feature's gradient to the single argmax neighbour
    (lowest local index on ties).
    """
    p = params.arrays
    cfg = params.config
    hidden = cfg.hidden_dim
    final = trace.final
    grads = {}
    grads["policy.w"] = final[batch.action_nodes].T @ dlogits
    grads["policy.b"] = np.asarray(dlogits.sum())
    grads["value.w"] = final[batch.agents].T @ dvalues
    grads["value.b"] = np.asarray(dvalues.sum())

    n = final.shape[0]
    dh = np.zeros_like(final)
    dh[batch.action_nodes] += dlogits[:, None] * p["policy.w"]
    dh[batch.agents] += dvalues[:, None] * p["value.w"]

    feature = np.arange(hidden)[None, :]
    for layer in reversed(range(cfg.num_layers)):
        tr = trace.layers[layer]
        dpre = dh[tr.act] * (tr.pre > 0)
        grads[f"layer{layer}.W_self"] = tr.h_act.T @ dpre
        grads[f"layer{layer}.W_neigh"] = tr.pooled.T @ dpre
        grads[f"layer{layer}.b"] = dpre.sum(axis=0)
        dh = np.zeros((n, hidden))
        dh[tr.act] = dpre @ p[f"layer{layer}.W_self"].T
        dpooled = dpre @ p[f"layer{layer}.W_neigh"].T
        dpooled[~tr.has] = 0.0
        source = np.take_along_axis(tr.nbr, tr.arg, axis=1)
        m = len(tr.src)
        dmsg = np.bincount((source * hidden + feature).ravel(), weights=dpooled.ravel(),
                           minlength=(m + 1) * hidden)[:m * hidden].reshape(m, hidden)
        dpre_pool = dmsg * (tr.pre_pool > 0)
        grads[f"layer{layer}.W_pool"] = tr.h_src.T @ dpre_pool
        grads[f"layer{layer}.b_pool"] = dpre_pool.sum(axis=0)
        dh[tr.src] += dpre_pool @ p[f"layer{layer}.W_pool"].T
    grads["input.W"] = batch.X.T @ dh
    grads["input.b"] = dh.sum(axis=0)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", name=name)
    return {name: grads[name] for name in params.arrays}


def forward(params: PolicyParameters, subgraph: WeightedGraph, attributes: np.ndarray,
            agent: int) -> PolicyOutput:
    batch = GraphBatch([(subgraph, attributes, agent)], params.config.input_dim)
    logits, values, _ = forward_batch(params, batch)
    return PolicyOutput(logits, float(values[0]))


def backward(params: PolicyParameters, subgraph: WeightedGraph, attributes: np.ndarray, agent: int,
             dlogits, dvalue: float) -> dict[str, np.ndarray]:
    batch = GraphBatch([(subgraph, attributes, agent)], params.config.input_dim)
    _, _, trace = forward_batch(params, batch)
    return backward_batch(params, batch, trace, np.asarray(dlogits, dtype=float),
                          np.array([float(dvalue)]))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def sample_action(output: PolicyOutput, rng=None, greedy: bool = False) -> tuple[int, float]:
    """Pick an edge index; greedy mode takes the first maximal logit."""
    logp = log_softmax(np.asarray(output.logits, dtype=float))
    if greedy:
        idx = int(np.argmax(logp))
    else:
        cdf = np.cumsum(np.exp(logp))
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        idx = min(idx, len(cdf) - 1)
    return idx, float(logp[idx])


# -- checkpoints -------------------------------------------------------------
#
# Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header,
# then each array as row-major little-endian float64 in header order.


def _encode(params: PolicyParameters, extra_arrays=None, metadata=None) -> bytes:
    arrays = dict(params.arrays)
    for name, arr in (extra_arrays or {}).items():
        arrays[f"extra/{name}"] = np.asarray(arr, dtype=np.float64)
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob), "sha256": hashlib.sha256(blob).hexdigest()})
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "config": asdict(params.config),
              "arrays": entries, "metadata": metadata or {}}
    head = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def save_parameters(path, params: PolicyParameters, extra_arrays=None, metadata=None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_encode(params, extra_arrays, metadata))
    tmp.replace(path)


def read_checkpoint(path, expected_config: PolicyConfig | None = None):
    """Returns ``(params, extra_arrays, metadata)``; verifies every checksum."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError("not a policy checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    try:
        config = PolicyConfig(**header["config"])
    except (TypeError, InvalidConfigurationError) as exc:
        raise CheckpointError(f"checkpoint carries an unusable config: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"checkpoint config {config} does not match {expected_config}")
    body = data[16 + hlen:]
    arrays, extra = {}, {}
    for entry in header["arrays"]:
        blob = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(blob) != entry["nbytes"] or hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"checksum mismatch for {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        if entry["name"].startswith("extra/"):
            extra[entry["name"][6:]] = arr
        else:
            arrays[entry["name"]] = arr
    try:
        params = PolicyParameters(config, arrays)
    except InvalidConfigurationError as exc:
        raise CheckpointError(str(exc)) from exc
    return params, extra, header["metadata"]


def load_parameters(path, expected_config: PolicyConfig | None = None) -> PolicyParameters:
    return read_checkpoint(path, expected_config)[0]
