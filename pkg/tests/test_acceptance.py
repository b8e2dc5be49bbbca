"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from auvrl import approx
from auvrl import config as C
from auvrl.approx import Mlp
from auvrl.cli import cmd_eval, cmd_train, read_csv
from auvrl.dpg import DpgAgent, PrioritizedBuffer, Transition, buffer_sample, policy_gradient
from auvrl.dynamics import DEFAULT_PARAMS, PlanarState, VehicleParams, VehicleState, step_planar, step_vertical
from auvrl.environments import GridWorld, SeafloorConfig, SeafloorEnv, terrain_generate
from auvrl.pg import (
    GaussianPolicy,
    PpoConfig,
    RolloutBatch,
    entropy,
    log_prob,
    log_prob_grad,
    make_value_net,
    ppo_loss,
    ppo_ratio,
)
from auvrl.tabular import bellman_residual, greedy_policy, q_learning, value_iteration
from oracles import central_diff, rel_error

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


# -- 1 tabular oracle -------------------------------------------------------------------


def test_criterion_1_tabular_oracle(capsys):
    g = GridWorld(obstacles={(1, 3), (2, 1), (3, 3)})
    t0 = time.perf_counter()
    V, Qstar, _ = value_iteration(g.to_mdp(), 1e-12)
    Q, _ = q_learning(g, 3000, np.random.default_rng(0))
    elapsed = time.perf_counter() - t0
    free = [s for s in range(g.n_states) if g.cell(s) not in g.obstacles and g.cell(s) != g.goal]
    learned, oracle = greedy_policy(Q, atol=1e-6), greedy_policy(Qstar, atol=1e-9)
    agree = np.mean([learned[s] == oracle[s] for s in free])
    res = bellman_residual(g.to_mdp(), V)
    ok = agree == 1.0 and res <= 1e-8 and elapsed < 10.0
    report(capsys, 1, ok, f"agreement {agree:.0%}, residual {res:.1e}, {elapsed:.1f} s")


# -- 2 gradients --------------------------------------------------------------------------


def _backward_worst(rng, n=100):
    worst, checked = 0.0, 0
    while checked < n:
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 7, size=depth + 1)]
        acts = [str(a) for a in rng.choice(["relu", "tanh", "linear"], size=depth)]
        net = approx.init(widths, acts, seed=int(rng.integers(1 << 30)))
        net.params += rng.normal(0.0, 0.1, size=net.params.size)
        x = rng.normal(size=net.n_in)
        h, kink = x, False
        for W, b, a in net.layers():
            z = h @ W + b
            kink |= a == "relu" and bool(np.any(np.abs(z) < 1e-4))
            h = approx._act(a, z)
        if kink:
            continue
        up = rng.normal(size=net.n_out)
        rec = approx.backward(net, x, up)
        fd = central_diff(lambda th: float(up @ approx.forward(Mlp(net.widths, net.activations, th), x)), net.params)
        worst = max(worst, rel_error(rec.params, fd))
        checked += 1
    return worst


def _log_prob_worst(rng, n=100):
    worst = 0.0
    for _ in range(n):
        net = approx.init((3, 5, 2), ("tanh", "linear"), seed=int(rng.integers(1 << 30)))
        net.params += rng.normal(0, 0.3, net.params.size)
        p = GaussianPolicy(net, rng.normal(0, 0.5, 2), 40.0)
        k = int(rng.integers(1, 6))
        s, u, w = rng.normal(size=(k, 3)), rng.normal(size=(k, 2)), rng.normal(size=k)

        def f(theta):
            q = p.copy()
            q.set_flat(theta)
            return float(np.sum(w * log_prob(q, s, u)))

        worst = max(worst, rel_error(log_prob_grad(p, s, u, w), central_diff(f, p.flat())))
    return worst


def _actor_worst(rng, n=100):
    worst = 0.0
    for _ in range(n):
        actor = approx.init((3, 5, 2), ("tanh", "tanh"), seed=int(rng.integers(1 << 30)))
        critic = approx.init((5, 6, 4, 1), ("tanh", "tanh", "linear"), seed=int(rng.integers(1 << 30)))
        actor.params += rng.normal(0, 0.3, actor.params.size)
        critic.params += rng.normal(0, 0.3, critic.params.size)
        ag = DpgAgent(actor, critic, actor.copy(), critic.copy(), rng.uniform(0.5, 3.0, 2), 0.9)
        S = rng.normal(size=(int(rng.integers(1, 9)), 3))

        def J(theta):
            a = approx.forward(Mlp(actor.widths, actor.activations, theta), S)
            return float(approx.forward(critic, np.concatenate([S, a], axis=1))[:, 0].mean())

        worst = max(worst, rel_error(policy_gradient(ag, S), central_diff(J, actor.params)))
    return worst


def test_criterion_2_gradient_suites(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bw, lp, ac = _backward_worst(rng), _log_prob_worst(rng), _actor_worst(rng)
    elapsed = time.perf_counter() - t0
    ok = bw <= 1e-4 and lp <= 1e-4 and ac <= 1e-3 and elapsed < 60.0
    report(capsys, 2, ok, f"backward {bw:.1e}, log_prob {lp:.1e}, actor {ac:.1e}, {elapsed:.1f} s")


# -- 3 prioritized replay ------------------------------------------------------------------


def test_criterion_3_per_statistics(capsys):
    rng = np.random.default_rng(0)
    buf = PrioritizedBuffer(2, 1, 1, alpha=1.0, eps=0.0)
    for p in (1.0, 3.0):
        buf.add(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False), priority=p)
    counts = np.zeros(2)
    for _ in range(50_000):
        counts += np.bincount(buffer_sample(buf, 2, rng)[1], minlength=2)
    freq = counts / 100_000
    freq_err = float(np.abs(freq - [0.25, 0.75]).max())

    big = PrioritizedBuffer(1000, 2, 1, alpha=0.6)
    t = Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(2), False)
    for _ in range(100_000):
        op = rng.integers(3)
        if op == 0 or len(big) < 8:
            big.add(t)
        elif op == 1:
            big.update_priorities(rng.integers(len(big), size=4), rng.exponential(2.0, size=4))
        else:
            big.sample(8, rng)
    leaves = big.tree.leaves().sum()
    drift = abs(big.tree.total - leaves) / leaves
    ok = freq_err <= 0.02 and drift <= 1e-6
    report(capsys, 3, ok, f"frequencies {freq.round(4).tolist()}, root drift {drift:.1e}")


# -- 4 PPO analytics ------------------------------------------------------------------------


def _scalar_policy(mu):
    return GaussianPolicy(Mlp((1, 1), ("linear",), np.array([0.0, mu])), np.array([0.0]), 1.0)


def _single_clip(ratio, adv):
    p = _scalar_policy(0.1)
    s, u = np.zeros((1, 1)), np.array([[0.6]])
    logp = log_prob(p, s, u)
    b = RolloutBatch(s, u, np.zeros(1), np.zeros(1), logp - np.log(ratio), np.zeros(1), np.array([adv]), np.zeros(1))
    return ppo_loss(p, Mlp((1, 1), ("linear",)), b, PpoConfig(clip=0.2, vf_coef=0.0, ent_coef=0.0))[1]["clip"]


def test_criterion_4_ppo_analytics(capsys):
    rng = np.random.default_rng(0)
    net = approx.init((3, 5, 2), ("tanh", "linear"), seed=1)
    p = GaussianPolicy(net, rng.normal(0, 0.5, 2), 40.0)
    s = rng.normal(size=(40, 3))
    u = p.mean(s) + rng.normal(size=(40, 2))
    adv = rng.normal(size=40)
    batch = RolloutBatch(s, u, np.zeros(40), np.zeros(40), log_prob(p, s, u), np.zeros(40), adv, rng.normal(size=40))
    ratio_ok = bool(np.all(ppo_ratio(p, batch.logp_old, s, u) == 1.0))
    at_old = ppo_loss(p, make_value_net(3, (4,)), batch, PpoConfig())[1]["clip"]
    clips = (_single_clip(1.5, 1.0), _single_clip(0.5, -1.0), at_old)
    clip_ok = clips[0] == 1.2 and clips[1] == -0.8 and clips[2] == float(np.mean(adv))

    g = GaussianPolicy(Mlp((1, 2), ("linear",)), np.array([0.3, -0.5]), 1.0)
    z = np.zeros((1_000_000, 1))
    mc = -float(np.mean(log_prob(g, z, g.sample(z, np.random.default_rng(0)))))
    ent_err = abs(mc - entropy(g)) / abs(entropy(g))
    ok = ratio_ok and clip_ok and ent_err <= 0.01
    report(capsys, 4, ok, f"ratio exact {ratio_ok}, clip values {clips[0]}/{clips[1]}/mean, entropy error {ent_err:.2%}")


# -- 5 history window ------------------------------------------------------------------------


def test_criterion_5_history_window(capsys):
    sine = terrain_generate("sine", {"offset": 10.0, "amplitude": 2.0, "wavelength": 50.0})
    worst = 0.0
    for n in (1, 3, 5):
        env = SeafloorEnv(sine, SeafloorConfig(n_history=n, mission_length=500.0, abort_dz=1e9), seed=0)
        rng = np.random.default_rng(11)
        obs = env.reset()
        dzs, emitted = [obs[-5]] * n, [obs[:n]]
        for _ in range(1000):
            obs, _, done = env.step(rng.uniform(-40, 40, size=2))
            dzs.append(env.record["z"] - env.record["target_z"])
            emitted.append(obs[:n])
            if done:
                break
        assert len(emitted) == 1001
        for k, h in enumerate(emitted):
            worst = max(worst, float(np.abs(np.asarray(h) - dzs[k : k + n]).max()))
    default_n = SeafloorConfig().n_history
    ok = worst <= 1e-12 and default_n == 3
    report(capsys, 5, ok, f"max reconstruction error {worst:.1e}, default window {default_n}")


# -- 6 DPG seafloor learning --------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_dpg_seafloor(capsys, tmp_path):
    t0 = time.perf_counter()
    ratios, steps = [], []
    for seed in SEEDS:
        cfg = C.load_config(CONFIGS / "dpg_sine.toml", seed_override=seed)
        run = cmd_train(cfg, tmp_path / f"dpg{seed}")
        rec = read_csv(run / "curve.csv")
        steps.append(sum(int(r["steps"]) for r in rec))
        info = json.loads((run / "run.json").read_text())
        ratios.append(info["final_metric"] / info["init_metric"])
    elapsed = time.perf_counter() - t0
    med = float(np.median(ratios))
    ok = med <= 0.5 and max(steps) <= 200_000 and elapsed <= 1200
    report(capsys, 6, ok, f"trained/untrained |dz| ratios {np.round(ratios, 3).tolist()}, median {med:.3f}, "
                          f"max steps {max(steps)}, {elapsed:.0f} s")


# -- 7 PPO pipe following -----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_ppo_pipe(capsys, tmp_path):
    t0 = time.perf_counter()
    rel, vis = [], []
    for seed in SEEDS:
        pid_cfg = C.load_config(CONFIGS / "pid_pipe.toml", seed_override=seed)
        ppo_cfg = C.load_config(CONFIGS / "ppo_pipe.toml", seed_override=seed)
        pid = read_csv(cmd_train(pid_cfg, tmp_path / f"pid{seed}") / "evals.csv")[-10:]
        ppo = read_csv(cmd_train(ppo_cfg, tmp_path / f"ppo{seed}") / "evals.csv")[-10:]
        pid_reward = np.mean([float(r["mean_reward"]) for r in pid])
        ppo_reward = np.mean([float(r["mean_reward"]) for r in ppo])
        rel.append(ppo_reward / pid_reward)
        vis.append(np.mean([float(r["visible_frac"]) for r in ppo]))
    elapsed = time.perf_counter() - t0
    med_rel, med_vis = float(np.median(rel)), float(np.median(vis))
    ok = med_rel >= 0.8 and med_vis >= 0.95 and elapsed <= 1200
    report(capsys, 7, ok, f"PPO/PID reward ratios {np.round(rel, 3).tolist()}, median {med_rel:.3f}, "
                          f"median visibility {med_vis:.1%}, {elapsed:.0f} s")


# -- 8 determinism ------------------------------------------------------------------------------


def test_criterion_8_determinism(capsys, tmp_path):
    base = {"seed": 5, "eval_every": 1, "final_eval_episodes": 2}
    cfgs = [
        C.parse_config({**base, "algorithm": "dpg", "env": "seafloor", "seafloor": {"mission_length": 15.0},
                        "dpg": {"episodes": 3, "warmup_steps": 20, "batch_size": 8}}),
        C.parse_config({**base, "algorithm": "ppo", "env": "pipe", "pipe": {"max_steps": 30},
                        "ppo": {"iterations": 2, "rollout_steps": 48, "minibatch": 16}}),
        C.parse_config({**base, "algorithm": "tabular-q", "env": "grid"}),
    ]
    identical = True
    for i, cfg in enumerate(cfgs):
        outs = []
        for rep in "ab":
            run = cmd_train(cfg, tmp_path / f"{i}{rep}")
            ev = cmd_eval(run / "checkpoint.json", cfg, 2, tmp_path / f"{i}{rep}" / "eval")
            outs.append({p.relative_to(run).as_posix(): p.read_bytes()
                         for d in (run, ev) for p in sorted(d.glob("*.csv"))})
        identical &= outs[0] == outs[1] and len(outs[0]) > 2
    report(capsys, 8, identical, "train and eval CSVs byte-identical across reruns for dpg, ppo and tabular-q")


# -- 9 dynamics physics ---------------------------------------------------------------------------


def _roll(s, u, p, dt, t_end):
    for _ in range(int(round(t_end / dt))):
        s = step_vertical(s, u, p, dt)
    return s


def test_criterion_9_dynamics(capsys):
    eq = VehicleState(5.0, 0.0, 0.0, 0.0)
    ps = PlanarState(3.0, -2.0, 0.7)
    fixed = step_vertical(eq, (0.0, 0.0)) == eq and step_planar(ps, (0.0, 0.0)) == ps
    w = _roll(VehicleState(0.0, 0.0, 0.0, 0.0), (5.0, 5.0), VehicleParams(d_w1=5.0, d_w2=0.0), 0.1, 200.0).w
    term_err = abs(w - 2.0) / 2.0
    s0, u = VehicleState(0.0, 1.0, 0.3, 0.5), (30.0, -10.0)
    ref = _roll(s0, u, DEFAULT_PARAMS, 1e-4, 2.0).as_array()
    e1 = np.abs(_roll(s0, u, DEFAULT_PARAMS, 0.1, 2.0).as_array() - ref).max()
    e2 = np.abs(_roll(s0, u, DEFAULT_PARAMS, 0.05, 2.0).as_array() - ref).max()
    ratio = e1 / e2
    ok = fixed and term_err <= 0.01 and 12.0 <= ratio <= 20.0
    report(capsys, 9, ok, f"fixed points exact {fixed}, terminal velocity error {term_err:.2%}, RK4 ratio {ratio:.1f}")
