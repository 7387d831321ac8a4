"""Command-line entry point: ``dpp {train,eval,heatmap,forest,oracle,gen-maps}``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Each SVG comes with a CSV or JSON sidecar holding the numbers it shows.
Colours: start blue, true goal green, decoy orange, plan-B decoy red;
heatmaps run from white (low) to dark purple (high), walls grey.

Exit codes: 0 success, 2 usage error, 3 data or geometry error,
4 numeric or convergence error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .deception import METRICS, MODES, RewardConfig, metric_heatmap
from .envs.forest import lateral_deviation, load_world, make_forest_world, run_forest_episode, save_world
from .envs.gridworld import builtin_map_dir, generate_corpus, load_corpus, load_gridworld, open_grid
from .envs.voronoi import voronoi_graph
from .errors import DPPError, InvalidArgumentError
from .graph import shortest_distances
from .oracle import brute_force_best_path, evaluate_policy
from .policy import PolicyConfig, read_checkpoint
from .render import forest_svg, grid_heatmap_svg, grid_trajectories_svg, visit_counts
from .trainer import EpisodeSpec, TrainConfig, train

log = logging.getLogger("deceptive_paths")


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_manifest(out: Path, command: str, config: dict, seed, inputs: dict, outputs: list) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": sorted(str(p) for p in outputs),
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out / "manifest.json"
    _write_atomic(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise InvalidArgumentError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(data) - {"train", "reward", "policy"}
    if unknown:
        raise InvalidArgumentError(f"unknown config sections {sorted(unknown)}")
    return data


def _cell(text):
    try:
        r, c = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROW,COL, got {text!r}") from None
    return r, c


def _point(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def _load_map(args):
    if args.map.startswith("open:"):
        try:
            w, h = (int(v) for v in args.map[5:].lower().split("x"))
        except ValueError:
            raise InvalidArgumentError(f"expected open:WxH, got {args.map!r}") from None
        return open_grid(w, h)
    return load_gridworld(args.map)


def _episode_nodes(world, args):
    """Start, true goal and decoy node ids from flags, falling back to map markers."""
    out = []
    for flag, marker in (("start", world.start), ("goal", world.goal), ("decoy", world.decoy)):
        cell = getattr(args, flag)
        node = world.node_at(*cell) if cell is not None else marker
        if node is None:
            raise InvalidArgumentError(f"no {flag} given and the map has no {flag} marker")
        out.append(node)
    if len(set(out)) != 3:
        raise InvalidArgumentError("start, goal and decoy must be distinct cells")
    return out


# -- commands ----------------------------------------------------------------


def cmd_train(args) -> list[Path]:
    cfg = _load_config(args.config)
    maps_dir = Path(args.maps) if args.maps else builtin_map_dir()
    if not maps_dir.is_dir():
        raise InvalidArgumentError(f"map directory {maps_dir} does not exist")
    maps = load_corpus(args.prefix, maps_dir)
    if not maps:
        raise InvalidArgumentError(f"no maps matching {args.prefix}*.txt in {maps_dir}")
    train_kw = dict(cfg.get("train", {}))
    if args.episodes is not None:
        train_kw["total_episodes"] = args.episodes
    if args.seed is not None:
        train_kw["seed"] = args.seed
    train_cfg = TrainConfig(**train_kw)
    reward_kw = dict(cfg.get("reward", {}))
    if args.mode is not None:
        reward_kw["mode"] = args.mode
    reward = RewardConfig(**reward_kw)
    policy_cfg = PolicyConfig(**cfg.get("policy", {}))
    eval_maps = load_corpus(args.eval_prefix, maps_dir) if args.eval_prefix else None
    train(maps, train_cfg, reward, policy_cfg, eval_set=eval_maps, out_dir=args.out)
    snapshot = {"train": asdict(train_cfg), "reward": asdict(reward), "policy": asdict(policy_cfg)}
    outputs = [args.out / "checkpoint.bin", args.out / "metrics.csv"]
    write_manifest(args.out, "train", snapshot, train_cfg.seed, {"maps": maps_dir, "config": args.config}, outputs)
    return outputs


def _checkpoint(path):
    params, _, meta = read_checkpoint(path)
    return params, meta


def cmd_eval(args) -> list[Path]:
    params, meta = _checkpoint(args.checkpoint)
    world = _load_map(args)
    start, goal, decoy = _episode_nodes(world, args)
    mode = args.mode or meta.get("reward_config", {}).get("mode", "exaggeration")
    reward = RewardConfig(mode=mode)
    d = float(shortest_distances(world.graph, goal)[start])
    if d >= world.graph.unreachable:
        raise InvalidArgumentError("goal is unreachable from start")
    spec = EpisodeSpec(world.graph, start, (goal, decoy), d + args.extra_steps, 0, world.name)
    seed = 0 if args.seed is None else args.seed
    report = evaluate_policy(params, [spec], reward, np.random.default_rng(seed), args.n, greedy=args.greedy)
    trajectories = report.trajectories
    records = [{"episode": i, "trajectory": traj, "cells": [list(world.cells[v]) for v in traj],
                "reached_goal": bool(row["reached_goal"]), "deceptiveness": float(row["deceptiveness"]),
                "path_length": float(row["path_length"])}
               for i, (traj, row) in enumerate(zip(trajectories, report.rows))]
    out = args.out
    paths = [out / "trajectories.json", out / "report.json", out / "visits.svg", out / "visits.csv"]
    _write_atomic(paths[0], json.dumps(records, indent=1) + "\n")
    _write_atomic(paths[1], report.to_json() + "\n")
    marks = {"start": start, "goal": goal, "decoy": decoy}
    _write_atomic(paths[2], grid_trajectories_svg(world, trajectories, marks, f"{args.n} trajectories"))
    _write_node_csv(paths[3], world, visit_counts(world.graph.n, trajectories), "visits")
    config = {"mode": mode, "extra_steps": args.extra_steps, "n": args.n, "greedy": args.greedy,
              "t_max": spec.budget}
    write_manifest(out, "eval", config, seed, {"checkpoint": args.checkpoint, "map": args.map}, paths)
    print(report.to_json())
    return paths


def _write_node_csv(path, world, values, column):
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "row", "col", column])
        for node, (r, c) in enumerate(world.cells):
            writer.writerow([node, r, c, repr(float(values[node]))])
    os.replace(tmp, path)


def cmd_heatmap(args) -> list[Path]:
    world = _load_map(args)
    start, goal, decoy = _episode_nodes(world, args)
    values = metric_heatmap(world.graph, start, [goal, decoy], 0, args.metric)
    out = args.out
    paths = [out / f"{args.metric}.csv", out / f"{args.metric}.svg"]
    _write_node_csv(paths[0], world, values, args.metric)
    _write_atomic(paths[1], grid_heatmap_svg(world, values, {"start": start, "goal": goal, "decoy": decoy},
                                             args.metric))
    write_manifest(out, "heatmap", {"metric": args.metric}, args.seed, {"map": args.map}, paths)
    return paths


def cmd_forest(args) -> list[Path]:
    params, _ = _checkpoint(args.checkpoint)
    if args.world:
        world = load_world(args.world)
    else:
        world = make_forest_world(args.generate, visibility=args.visibility)
    if args.capture_radius is not None:
        world = replace(world, goal_capture_radius=args.capture_radius)
    seed = 0 if args.seed is None else args.seed
    episode = run_forest_episode(world, params, args.extra_distance, np.random.default_rng(seed),
                                 greedy=args.greedy, t_switch=args.t_switch, plan_b_decoy=args.plan_b)
    out = args.out
    paths = [out / "world.json", out / "trajectory.json", out / "forest.svg", out / "summary.json"]
    save_world(world, paths[0])
    _write_atomic(paths[1], json.dumps(episode.records, indent=1) + "\n")
    graph = None
    if args.voronoi:
        graph = voronoi_graph(world.tree_array, world.bounds)
    _write_atomic(paths[2], forest_svg(world, [episode.points], graph, args.plan_b,
                                       f"extra distance {args.extra_distance}"))
    summary = {"reached_goal": episode.reached_goal, "budget_exhausted": episode.budget_exhausted,
               "initial_budget": episode.initial_budget, "path_length": episode.path_length,
               "steps": len(episode.records) - 1,
               "lateral_deviation": lateral_deviation(episode.points, world.start, world.goal, world.decoy)}
    _write_atomic(paths[3], json.dumps(summary, indent=1, sort_keys=True) + "\n")
    config = {"extra_distance": args.extra_distance, "visibility": args.visibility, "t_switch": args.t_switch,
              "plan_b": args.plan_b, "greedy": args.greedy, "generate": args.generate}
    write_manifest(out, "forest", config, seed, {"checkpoint": args.checkpoint, "world": args.world}, paths)
    print(json.dumps(summary, sort_keys=True))
    return paths


def cmd_oracle(args) -> list[Path]:
    world = _load_map(args)
    start, goal, decoy = _episode_nodes(world, args)
    reward = RewardConfig(mode=args.mode)
    path, score = brute_force_best_path(world.graph, start, goal, [goal, decoy], args.t_max, reward)
    out = args.out
    result = {"path": path, "cells": [list(world.cells[v]) for v in path], "return": score,
              "t_max": args.t_max, "mode": args.mode}
    paths = [out / "best_path.json"]
    _write_atomic(paths[0], json.dumps(result, indent=1) + "\n")
    write_manifest(out, "oracle", {"t_max": args.t_max, "mode": args.mode}, args.seed, {"map": args.map}, paths)
    print(json.dumps({"path": path, "return": score}))
    return paths


def cmd_gen_maps(args) -> list[Path]:
    paths = generate_corpus(args.out)
    write_manifest(args.out, "gen-maps", {}, args.seed, {}, paths)
    return paths


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpp", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--config", default=None, help="JSON file with train/reward/policy sections")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with PPO")
    p.add_argument("--maps", default=None, help="map directory (default: bundled corpus)")
    p.add_argument("--prefix", default="train8", help="training map name prefix")
    p.add_argument("--eval-prefix", default="val8", help="held-out map name prefix ('' to disable)")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_train)

    def episode_flags(q):
        q.add_argument("--map", required=True, help="map file, or open:WxH for an empty grid")
        q.add_argument("--start", type=_cell, default=None, help="ROW,COL (default: S marker)")
        q.add_argument("--goal", type=_cell, default=None, help="ROW,COL (default: G marker)")
        q.add_argument("--decoy", type=_cell, default=None, help="ROW,COL (default: D marker)")

    p = sub.add_parser("eval", help="roll out a trained policy with T_max = d(start, goal) + extra steps")
    p.add_argument("--checkpoint", required=True)
    episode_flags(p)
    p.add_argument("--extra-steps", type=int, default=0)
    p.add_argument("-n", type=int, default=32, help="number of rollouts")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--mode", choices=MODES, default=None, help="reward mode (default: from checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="per-cell deception metric")
    episode_flags(p)
    p.add_argument("--metric", choices=METRICS, default="proposed_ambiguity")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("forest", help="run a grid-trained policy in a continuous forest")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--world", default=None, help="forest world JSON")
    src.add_argument("--generate", type=int, default=None, help="generate a 60-tree forest from this seed")
    p.add_argument("--extra-distance", type=float, default=16.0)
    p.add_argument("--visibility", type=float, default=2.0, help="perception radius in mean tree separations")
    p.add_argument("--capture-radius", type=float, default=None)
    p.add_argument("--t-switch", type=int, default=None)
    p.add_argument("--plan-b", type=_point, default=None, help="X,Y of the plan-B decoy")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--voronoi", action="store_true", help="draw the global Voronoi graph")
    p.set_defaults(func=cmd_forest)

    p = sub.add_parser("oracle", help="exhaustive best deceptive path on a small map")
    episode_flags(p)
    p.add_argument("--t-max", type=int, required=True)
    p.add_argument("--mode", choices=MODES, default="exaggeration")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gen-maps", help="write the gridworld corpus")
    p.set_defaults(func=cmd_gen_maps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "forest" and args.t_switch is not None and args.plan_b is None:
            parser.error("--t-switch needs --plan-b")
        args.out.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except DPPError as exc:
        print(f"dpp {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
