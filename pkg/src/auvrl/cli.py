"""Command-line entry point: ``auvrl train|eval|compare|terrain-preview``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from auvrl import ConfigError, DomainError, NumericAbort, __version__
from auvrl import config as C
from auvrl import approx, dpg, pg, tabular
from auvrl.baselines import pid_policy_for
from auvrl.environments import ACTIONS, PIPE_COLUMNS, SEAFLOOR_COLUMNS, PipeEnv
from auvrl.rollout import child_seed, metric_name, run_episode

log = logging.getLogger("auvrl")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# -- csv helpers -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[h] for h in header]
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# -- policies and checkpoints --------------------------------------------------------


def _env_dims(env):
    return (env.obs_dim, env.act_dim) if hasattr(env, "obs_dim") else (env.n_states, len(ACTIONS))


def checkpoint_for(cfg: C.TrainConfig, env, model) -> dict:
    obs_dim, act_dim = _env_dims(env)
    ck = {"algorithm": cfg.algorithm, "env": cfg.env, "obs_dim": obs_dim, "act_dim": act_dim}
    if cfg.algorithm == "dpg":
        ck["agent"] = dpg.agent_to_dict(model)
    elif cfg.algorithm == "ppo":
        policy, value_net = model
        ck["policy"] = pg.policy_to_dict(policy)
        ck["value_net"] = approx.to_dict(value_net)
    elif cfg.algorithm == "reinforce":
        ck["policy"] = pg.policy_to_dict(model)
    elif cfg.algorithm == "tabular-q":
        ck["q"] = np.asarray(model).tolist()
    return ck


def policy_from_checkpoint(ck: dict, env):
    """Deterministic evaluation policy for a checkpoint, after checking it fits ``env``."""
    want = _env_dims(env)
    have = (ck["obs_dim"], ck["act_dim"])
    if tuple(have) != tuple(want):
        raise DomainError(f"checkpoint expects (obs, act) widths {tuple(have)} but the environment provides {want}")
    algo = ck["algorithm"]
    if algo == "dpg":
        return dpg.greedy_policy(dpg.agent_from_dict(ck["agent"]))
    if algo in ("ppo", "reinforce"):
        return pg.deterministic_policy(pg.policy_from_dict(ck["policy"]))
    if algo == "pid":
        return pid_policy_for(env)
    if algo == "tabular-q":
        return np.asarray(ck["q"])
    raise DomainError(f"unknown checkpoint algorithm {algo!r}")


def _reset_policy(policy):
    if hasattr(policy, "reset"):
        policy.reset()


def _grid_episode(world, Q, max_steps=200):
    cell, ret, disc, rows = world.start, 0.0, 1.0, []
    for t in range(max_steps):
        a = tabular.greedy_action(Q[world.index(cell)])
        nxt, r, done = world.step(cell, a)
        rows.append({"t": t, "row": cell[0], "col": cell[1], "action": ACTIONS[a], "reward": r})
        ret += disc * r
        disc *= world.gamma
        cell = nxt
        if done:
            break
    return ret, len(rows), rows


def _metric_header(env):
    if not hasattr(env, "obs_dim"):
        return ["episode", "return", "steps"]
    head = ["episode", "return", metric_name(env), "steps"]
    if isinstance(env, PipeEnv):
        head.append("visible_frac")
    return head


def _curve_header(env):
    if not hasattr(env, "obs_dim"):
        return ["episode", "return", "steps"]
    return ["episode", "return", metric_name(env), "steps"]


def evaluate_policy(env, policy, episodes: int, record: bool = False):
    """Run ``episodes`` frozen-policy episodes; returns (metric rows, trajectories)."""
    rows, trajs = [], []
    for i in range(episodes):
        if isinstance(policy, np.ndarray):
            ret, steps, traj = _grid_episode(env, policy)
            rows.append([i, ret, steps])
            trajs.append(traj)
            continue
        _reset_policy(policy)
        res = run_episode(env, policy, record=record)
        row = [i, res.ret, res.metric, res.steps]
        if res.visible_frac is not None:
            row.append(res.visible_frac)
        rows.append(row)
        trajs.append(res.rows)
    return rows, trajs


def eval_env(cfg: C.TrainConfig):
    return C.build_env(cfg, child_seed(cfg.seed, "eval"))


# -- train -------------------------------------------------------------------------


class _Evaluator:
    """Periodic frozen-policy evaluation on a dedicated, persistently seeded environment."""

    def __init__(self, cfg: C.TrainConfig):
        self.cfg = cfg
        self.env = eval_env(cfg)
        self.rows = []

    def __call__(self, after, policy):
        for _ in range(self.cfg.eval_episodes):
            _reset_policy(policy)
            res = run_episode(self.env, policy)
            row = [len(self.rows), after, res.ret, res.metric, res.steps]
            if res.visible_frac is not None:
                row.append(res.visible_frac)
            self.rows.append(row)

    def header(self):
        head = ["eval", "after", "return", metric_name(self.env), "steps"]
        if isinstance(self.env, PipeEnv):
            head.append("visible_frac")
        return head


def _train_model(cfg: C.TrainConfig, env, evaluator):
    """Run the configured algorithm; returns (initial model, final model, curve rows)."""
    seed = cfg.seed
    if cfg.algorithm == "dpg":
        dcfg = C.dpg_config(cfg)
        init = dpg.initial_agent(env, dcfg, seed)
        prefill = ()
        if cfg.dpg.pid_prefill:
            from auvrl.baselines import warm_start_actions

            pre_env = C.build_env(cfg, child_seed(seed, "sampling"))
            prefill = warm_start_actions(pid_policy_for(pre_env), pre_env, cfg.dpg.pid_prefill)

        def cb(ep, agent):
            if (ep + 1) % cfg.eval_every == 0:
                evaluator(ep, dpg.greedy_policy(agent))

        agent, curve = dpg.train_dpg(env, dcfg, seed, prefill=prefill, callback=cb)
        return init, agent, curve
    if cfg.algorithm == "ppo":
        pcfg = C.ppo_config(cfg)
        init = pg.initial_networks(env, pcfg, seed)

        def cb(it, policy, value_net):
            if (it + 1) % cfg.eval_every == 0:
                evaluator(it, pg.deterministic_policy(policy))

        policy, value_net, curve = pg.train_ppo(env, pcfg, seed, callback=cb)
        return init, (policy, value_net), curve
    if cfg.algorithm == "reinforce":
        rcfg = C.reinforce_config(cfg)
        init = pg.initial_reinforce_policy(env, rcfg, seed)

        def cb(it, policy):
            if (it + 1) % cfg.eval_every == 0:
                evaluator(it, pg.deterministic_policy(policy))

        policy, curve = pg.train_reinforce(env, rcfg, seed, callback=cb)
        return init, policy, curve
    if cfg.algorithm == "pid":
        env.rng = np.random.default_rng(child_seed(seed, "env"))
        rows, _ = evaluate_policy(env, pid_policy_for(env), cfg.pid.episodes)
        curve = [tuple(r[:4]) for r in rows]
        for i in range(cfg.pid.episodes):
            if (i + 1) % cfg.eval_every == 0:
                evaluator(i, pid_policy_for(evaluator.env))
        return None, None, curve
    # tabular-q on the grid
    t = cfg.tabular
    rng = np.random.default_rng(child_seed(seed, "exploration"))
    Q, raw = tabular.q_learning(env, t.episodes, rng, t.alpha0, t.alpha_min, t.alpha_decay, t.epsilon, t.max_steps)
    curve = [(i, ret, steps) for i, (ret, steps) in enumerate(raw)]
    return np.zeros_like(Q), Q, curve


def cmd_train(cfg: C.TrainConfig, out: str | None = None) -> Path:
    run_dir = Path(out or cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    C.save_config(cfg, run_dir / "config.toml")
    started = time.time()
    env = C.build_env(cfg, child_seed(cfg.seed, "env"))
    is_grid = cfg.env == "grid"
    evaluator = None if is_grid else _Evaluator(cfg)

    try:
        init, model, curve = _train_model(cfg, env, evaluator)
    except NumericAbort as e:
        with open(run_dir / "diagnostics.json", "w") as f:
            json.dump({"error": str(e), **e.diagnostics}, f, indent=2, default=str)
        raise

    write_csv(run_dir / "curve.csv", _curve_header(env), curve)
    if cfg.algorithm == "pid":
        ck = {"algorithm": "pid", "env": cfg.env, "obs_dim": env.obs_dim, "act_dim": env.act_dim}
        init_ck = ck
    else:
        ck = checkpoint_for(cfg, env, model)
        init_ck = checkpoint_for(cfg, env, init)
    for name, payload in (("checkpoint.json", ck), ("init_checkpoint.json", init_ck)):
        with open(run_dir / name, "w") as f:
            json.dump(payload, f)

    n_final = cfg.final_eval_episodes
    init_rows, _ = evaluate_policy(eval_env(cfg), policy_from_checkpoint(init_ck, env), n_final)
    write_csv(run_dir / "init_metrics.csv", _metric_header(env), init_rows)
    if is_grid:
        final_rows, _ = evaluate_policy(env, np.asarray(model), max(n_final, 1))
        write_csv(run_dir / "evals.csv", ["eval", "after", "return", "steps"],
                  [[i, len(curve) - 1, r[1], r[2]] for i, r in enumerate(final_rows)])
        tabular.write_qtable_csv(model, run_dir / "qtable.csv")
        final_metric = final_rows[-1][1]
        init_metric = init_rows[-1][1] if init_rows else None
    else:
        write_csv(run_dir / "evals.csv", evaluator.header(), evaluator.rows)
        tail = evaluator.rows[-n_final:] if n_final else []
        final_metric = float(np.mean([r[3] for r in tail])) if tail else None
        init_metric = float(np.mean([r[2] for r in init_rows])) if init_rows else None

    record = {
        "algorithm": cfg.algorithm,
        "env": cfg.env,
        "seed": cfg.seed,
        "metric": "return" if is_grid else metric_name(env),
        "final_metric": final_metric,
        "init_metric": init_metric,
        "episodes": len(curve),
        "checkpoint": "checkpoint.json",
        "wall_clock_s": round(time.time() - started, 3),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
    }
    with open(run_dir / "run.json", "w") as f:
        json.dump(record, f, indent=2)
    log.info("run written to %s (final %s = %s)", run_dir, record["metric"], final_metric)
    return run_dir


# -- eval --------------------------------------------------------------------------


def cmd_eval(checkpoint, cfg: C.TrainConfig, episodes: int, out) -> Path:
    with open(checkpoint) as f:
        ck = json.load(f)
    if ck.get("env") != cfg.env:
        raise DomainError(f"checkpoint was trained on env {ck.get('env')!r} but the config selects {cfg.env!r}")
    env = eval_env(cfg)
    policy = policy_from_checkpoint(ck, env)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows, trajs = evaluate_policy(env, policy, episodes, record=True)
    write_csv(out / "metrics.csv", _metric_header(env), rows)
    if cfg.env == "seafloor":
        cols = SEAFLOOR_COLUMNS
    elif cfg.env == "pipe":
        cols = PIPE_COLUMNS
    else:
        cols = ("t", "row", "col", "action", "reward")
    for i, traj in enumerate(trajs):
        write_csv(out / f"trajectory_{i:03d}.csv", cols, traj)
    return out


# -- compare -----------------------------------------------------------------------


def _auc(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.sum())
    return float(np.sum(0.5 * (v[1:] + v[:-1])))


def summarize_run(run_dir, threshold=None) -> dict:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise DomainError(f"run directory not found: {run_dir}")
    with open(run_dir / "run.json") as f:
        rec = json.load(f)
    curve = read_csv(run_dir / "curve.csv")
    evals = read_csv(run_dir / "evals.csv")
    metric = rec["metric"]
    key = metric if curve and metric in curve[0] else "return"
    values = [float(r[key]) for r in curve]
    lower_better = metric == "mean_abs_dz"
    reached = None
    if threshold is not None:
        for r in evals:
            m = float(r[metric])
            if (m <= threshold) if lower_better else (m >= threshold):
                reached = int(r["after"]) + 1
                break
    return {
        "run": str(run_dir),
        "algorithm": rec["algorithm"],
        "env": rec["env"],
        "metric": metric,
        "final_metric": rec["final_metric"],
        "auc": _auc(values),
        "episodes_to_threshold": reached,
    }


def cmd_compare(run_dirs, out=None, threshold=None) -> list[dict]:
    if len(run_dirs) < 2:
        raise DomainError("compare needs at least two run directories")
    for d in run_dirs:
        if not Path(d).is_dir():
            raise DomainError(f"run directory not found: {d}")
    envs = set()
    for d in run_dirs:
        with open(Path(d) / "run.json") as f:
            envs.add(json.load(f)["env"])
    if len(envs) != 1:
        raise DomainError(f"cannot compare runs over different environments: {sorted(envs)}")
    if threshold is None:
        with open(Path(run_dirs[0]) / "run.json") as f:
            first = json.load(f)
        if first["metric"] == "mean_abs_dz" and first.get("init_metric") is not None:
            threshold = 0.5 * first["init_metric"]
        elif first.get("final_metric") is not None:
            threshold = 0.8 * first["final_metric"]
    rows = [summarize_run(d, threshold) for d in run_dirs]
    ref = rows[0]
    for r in rows:
        for k in ("final_metric", "auc"):
            a, b = r[k], ref[k]
            r[f"delta_{k}"] = None if a is None or b is None else a - b
        r["threshold"] = threshold
    header = ["run", "algorithm", "env", "metric", "final_metric", "auc", "episodes_to_threshold",
              "threshold", "delta_final_metric", "delta_auc"]
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_csv(out, header, [{h: ("" if r[h] is None else r[h]) for h in header} for r in rows])
    return rows


def format_table(rows) -> str:
    cols = ["run", "algorithm", "metric", "final_metric", "auc", "episodes_to_threshold", "delta_final_metric"]

    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    table = [cols] + [[cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in table)


# -- terrain preview -------------------------------------------------------------------


def cmd_terrain_preview(cfg: C.TrainConfig, out, step: float = 0.5) -> Path:
    terrain = C.build_terrain(cfg)
    length = cfg.seafloor.mission_length
    xs = np.arange(0.0, length + 0.5 * step, step)
    rows = [[x, terrain.depth(x), terrain.depth(x) - cfg.seafloor.z_r] for x in xs]
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["x", "seafloor_z", "target_z"], rows)
    return out


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auvrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent and write a run directory")
    t.add_argument("--config", required=True)
    t.add_argument("--seed-override", type=int)
    t.add_argument("--out")

    e = sub.add_parser("eval", help="evaluate a frozen checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed-override", type=int)
    e.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="summarise two or more runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--threshold", type=float)
    c.add_argument("--out")

    tp = sub.add_parser("terrain-preview", help="dump the configured terrain profile as CSV")
    tp.add_argument("--config", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--step", type=float, default=0.5)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            cfg = C.load_config(args.config, args.seed_override)
            print(cmd_train(cfg, args.out))
        elif args.command == "eval":
            cfg = C.load_config(args.config, args.seed_override)
            print(cmd_eval(args.checkpoint, cfg, args.episodes, args.out))
        elif args.command == "compare":
            rows = cmd_compare(args.runs, args.out, args.threshold)
            print(format_table(rows))
        elif args.command == "terrain-preview":
            cfg = C.load_config(args.config)
            print(cmd_terrain_preview(cfg, args.out, args.step))
    except (ConfigError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
