import numpy as np
import pytest

from auvrl import DomainError, approx
from auvrl.approx import Adam, Mlp
from auvrl.dpg import (
    Batch,
    DpgAgent,
    DpgConfig,
    PrioritizedBuffer,
    SumTree,
    Transition,
    act,
    actor_update,
    agent_from_dict,
    agent_to_dict,
    buffer_sample,
    critic_update,
    initial_agent,
    make_agent,
    policy_gradient,
    priority,
    soft_update,
    td_targets,
    train_dpg,
    weighted_td_loss,
)
from auvrl.environments import SeafloorConfig, SeafloorEnv, terrain_generate
from oracles import central_diff, discounted_lqr_gain, grid_vi_gain, rel_error

LIMIT = np.array([40.0, 40.0])


def _transition(rng, obs_dim=7, done=False):
    return Transition(rng.normal(size=obs_dim), rng.uniform(-40, 40, 2), float(rng.normal()), rng.normal(size=obs_dim), done)


def _tanh_agent(rng, obs_dim=3, act_dim=2, gamma=0.9):
    """Smooth networks so finite differences are well defined everywhere."""
    actor = approx.init((obs_dim, 5, act_dim), ("tanh", "tanh"), seed=int(rng.integers(1 << 30)))
    critic = approx.init((obs_dim + act_dim, 6, 4, 1), ("tanh", "tanh", "linear"), seed=int(rng.integers(1 << 30)))
    actor.params += rng.normal(0, 0.3, actor.params.size)
    critic.params += rng.normal(0, 0.3, critic.params.size)
    limit = rng.uniform(0.5, 3.0, act_dim)
    return DpgAgent(actor, critic, actor.copy(), critic.copy(), limit, gamma)


# -- sum-tree and replay -----------------------------------------------------------


def test_sum_tree_find_and_total():
    t = SumTree(5)
    t.update([0, 1, 2, 3, 4], [1.0, 2.0, 0.0, 3.0, 4.0])
    assert t.total == 10.0
    assert t.find([0.0, 0.99, 1.0, 2.99, 3.0, 5.99, 6.0, 9.99]).tolist() == [0, 0, 1, 1, 3, 3, 4, 4]


def test_sum_tree_integrity_under_mixed_operations():
    rng = np.random.default_rng(0)
    buf = PrioritizedBuffer(1000, 2, 1, alpha=0.6)
    t = Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(2), False)
    for _ in range(100_000):
        op = rng.integers(3)
        if op == 0 or len(buf) < 8:
            buf.add(t)
        elif op == 1:
            idx = rng.integers(len(buf), size=4)
            buf.update_priorities(idx, rng.exponential(2.0, size=4))
        else:
            buf.sample(8, rng)
    leaves = buf.tree.leaves()
    assert abs(buf.tree.total - leaves.sum()) <= 1e-6 * leaves.sum()
    assert abs(buf.tree.total - leaves.sum()) <= 1e-9 * leaves.sum()
    assert buf.priorities[: len(buf)].min() >= buf.eps


def test_single_transition_always_selected():
    buf = PrioritizedBuffer(10, 7, 2)
    buf.add(_transition(np.random.default_rng(0)))
    _, idx, w = buf.sample(1, np.random.default_rng(1))
    assert idx.tolist() == [0] and w.tolist() == [1.0]


def _frequencies(priorities, alpha, draws=100_000):
    M = len(priorities)
    buf = PrioritizedBuffer(len(priorities), 7, 2, alpha=alpha, eps=0.0)
    rng = np.random.default_rng(0)
    for p in priorities:
        buf.add(_transition(rng), priority=p)
    counts = np.zeros(len(priorities))
    for _ in range(draws // M):
        _, idx, _ = buffer_sample(buf, M, rng)
        counts += np.bincount(idx, minlength=len(priorities))
    return counts / draws


def test_proportional_sampling_frequencies():
    f = _frequencies([1.0, 3.0], alpha=1.0)
    assert np.abs(f - [0.25, 0.75]).max() <= 0.02


def test_alpha_zero_is_uniform():
    f = _frequencies([1.0, 3.0, 10.0, 0.5], alpha=0.0)
    assert np.abs(f - 0.25).max() <= 0.02


def test_importance_weights():
    buf = PrioritizedBuffer(4, 7, 2, alpha=1.0, eps=0.0)
    rng = np.random.default_rng(0)
    for p in (1.0, 3.0):
        buf.add(_transition(rng), priority=p)
    _, idx, w = buf.sample(2, rng, beta=1.0)
    P = np.array([0.25, 0.75])[idx]
    expected = (2 * P) ** -1.0
    np.testing.assert_allclose(w, expected / expected.max())


def test_underfull_buffer_rejected():
    buf = PrioritizedBuffer(10, 7, 2)
    buf.add(_transition(np.random.default_rng(0)))
    with pytest.raises(DomainError):
        buf.sample(2, np.random.default_rng(0))


def test_fifo_eviction():
    C, k = 8, 3
    buf = PrioritizedBuffer(C, 1, 1)
    for i in range(C + k):
        buf.add(Transition(np.zeros(1), np.zeros(1), float(i), np.zeros(1), False))
    assert len(buf) == C
    assert sorted(buf.r.tolist()) == list(map(float, range(k, C + k)))


def test_max_priority_insertion():
    buf = PrioritizedBuffer(8, 7, 2, alpha=1.0)
    rng = np.random.default_rng(0)
    buf.add(_transition(rng))
    buf.update_priorities([0], [7.0])
    i = buf.add(_transition(rng))
    assert buf.priorities[i] == buf.priorities[0] == 7.0 + buf.eps
    assert buf.tree.leaves()[i] == 7.0 + buf.eps


# -- agent ------------------------------------------------------------------------------


def test_targets_start_equal_to_main():
    ag = make_agent(7, 2, LIMIT, seed=3)
    assert ag.actor_target == ag.actor and ag.critic_target == ag.critic
    assert ag.actor_target.params is not ag.actor.params


def test_act_properties():
    ag = make_agent(7, 2, LIMIT, seed=0)
    obs = np.random.default_rng(0).normal(size=7)
    a1, a2 = act(ag, obs, False), act(ag, obs, False)
    assert np.array_equal(a1, a2)
    ag.sigma = 0.0
    assert np.array_equal(act(ag, obs, True, np.random.default_rng(1)), a1)
    ag.sigma = 5.0
    noisy = act(ag, obs, True, np.random.default_rng(1))
    assert np.all(np.abs(noisy) <= LIMIT)
    ag.actor.params[:] = 0.0
    assert np.array_equal(act(ag, obs, False), np.zeros(2))


def test_act_ignores_critic():
    ag = make_agent(7, 2, LIMIT, seed=0)
    obs = np.random.default_rng(0).normal(size=7)
    before = act(ag, obs, False)
    ag.critic.params[:] = np.random.default_rng(1).normal(size=ag.critic.params.size)
    assert np.array_equal(act(ag, obs, False), before)


def test_priority_examples():
    ag = make_agent(7, 2, LIMIT, DpgConfig(gamma=0.0), seed=0)
    ag.critic.params[:] = 0.0
    rng = np.random.default_rng(0)
    t = Transition(rng.normal(size=7), np.zeros(2), 1.0, rng.normal(size=7), False)
    assert priority(ag, t, eps=1e-3) == 1.0 + 1e-3
    zero = Transition(t.s, t.u, 0.0, t.s_next, False)
    assert priority(ag, zero, eps=1e-3) == 1e-3


def test_priority_matches_scalar_recomputation():
    rng = np.random.default_rng(5)
    ag = make_agent(7, 2, LIMIT, seed=1)
    ag.critic_target.params += rng.normal(0, 0.05, ag.critic.params.size)
    ts = [_transition(rng, done=bool(i % 5 == 0)) for i in range(32)]

    def q(net, s, u):
        return float(approx.forward(net, np.concatenate([s, u / LIMIT]))[0])

    for t in ts:
        boot = 0.0
        if not t.done:
            a_next = approx.forward(ag.actor_target, t.s_next) * LIMIT
            boot = ag.gamma * q(ag.critic_target, t.s_next, a_next)
        expected = abs(t.r + boot - q(ag.critic, t.s, t.u)) + 1e-3
        assert priority(ag, t) == pytest.approx(expected, abs=1e-10)


def test_gamma_zero_targets_are_rewards():
    rng = np.random.default_rng(0)
    ag = make_agent(7, 2, LIMIT, DpgConfig(gamma=0.0), seed=0)
    batch = Batch.from_transitions([_transition(rng) for _ in range(16)])
    assert np.array_equal(td_targets(ag, batch), batch.r)


def test_critic_update_descends_on_fixed_batch():
    rng = np.random.default_rng(0)
    ag = make_agent(7, 2, LIMIT, DpgConfig(critic_lr=1e-4), seed=0)
    batch = Batch.from_transitions([_transition(rng) for _ in range(64)])
    w = rng.uniform(0.2, 1.0, 64)
    losses = [weighted_td_loss(ag, batch, w)]
    for _ in range(15):
        critic_update(ag, batch, w)
        losses.append(weighted_td_loss(ag, batch, w))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_critic_update_returns_abs_td():
    rng = np.random.default_rng(1)
    ag = make_agent(7, 2, LIMIT, seed=0)
    batch = Batch.from_transitions([_transition(rng) for _ in range(8)])
    expected = np.abs(td_targets(ag, batch) - ag.q(batch.s, batch.u))
    np.testing.assert_allclose(critic_update(ag, batch), expected, atol=1e-12)


def test_zero_weights_leave_critic_unchanged():
    rng = np.random.default_rng(0)
    ag = make_agent(7, 2, LIMIT, seed=0)
    before = ag.critic.params.copy()
    critic_update(ag, Batch.from_transitions([_transition(rng) for _ in range(8)]), np.zeros(8))
    assert np.array_equal(ag.critic.params, before)


def test_actor_gradient_zero_when_critic_ignores_action():
    rng = np.random.default_rng(0)
    ag = make_agent(7, 2, LIMIT, seed=0)
    W0 = next(ag.critic.layers())[0]
    W0[7:, :] = 0.0
    batch = Batch.from_transitions([_transition(rng) for _ in range(16)])
    before = ag.actor.params.copy()
    assert actor_update(ag, batch) == 0.0
    assert np.array_equal(ag.actor.params, before)


def test_actor_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        ag = _tanh_agent(rng)
        S = rng.normal(size=(int(rng.integers(1, 9)), 3))

        def J(theta):
            a = approx.forward(Mlp(ag.actor.widths, ag.actor.activations, theta), S)
            x = np.concatenate([S, a], axis=1)
            return float(approx.forward(ag.critic, x)[:, 0].mean())

        worst = max(worst, rel_error(policy_gradient(ag, S), central_diff(J, ag.actor.params)))
    assert worst <= 1e-3


def test_actor_update_ascends_q():
    rng = np.random.default_rng(3)
    ag = _tanh_agent(rng)
    ag.actor_opt = Adam(1e-3)
    S = rng.normal(size=(32, 3))
    batch = Batch(S, np.zeros((32, 2)), np.zeros(32), S, np.zeros(32))
    q0 = ag.q(S, ag.mu(S)).mean()
    for _ in range(20):
        actor_update(ag, batch)
    assert ag.q(S, ag.mu(S)).mean() > q0


def test_soft_update_exact():
    ag = make_agent(7, 2, LIMIT, DpgConfig(tau=0.3), seed=0)
    rng = np.random.default_rng(0)
    ag.actor.params += rng.normal(size=ag.actor.params.size)
    ag.critic.params += rng.normal(size=ag.critic.params.size)
    old_a, old_c = ag.actor_target.params.copy(), ag.critic_target.params.copy()
    soft_update(ag)
    assert np.array_equal(ag.actor_target.params, (1 - 0.3) * old_a + 0.3 * ag.actor.params)
    assert np.array_equal(ag.critic_target.params, (1 - 0.3) * old_c + 0.3 * ag.critic.params)


def test_agent_serialization_roundtrip():
    ag = make_agent(7, 2, LIMIT, DpgConfig(obs_scale=(1.0,) * 7), seed=0)
    back = agent_from_dict(agent_to_dict(ag))
    obs = np.ones(7)
    assert np.array_equal(act(back, obs, False), act(ag, obs, False))
    assert back.critic == ag.critic and back.critic_target == ag.critic_target


# -- training loop -------------------------------------------------------------------------


def _small_env():
    terrain = terrain_generate("sine", {"offset": 10.0, "amplitude": 2.0, "wavelength": 50.0})
    return SeafloorEnv(terrain, SeafloorConfig(mission_length=20.0, init_offset_range=1.0))


SMALL = DpgConfig(episodes=3, warmup_steps=50, batch_size=16, actor_hidden=(8,), critic_hidden=(8, 8))


def test_zero_episodes_returns_initialization():
    env = _small_env()
    cfg = DpgConfig(episodes=0)
    ag, curve = train_dpg(env, cfg, seed=4)
    init = initial_agent(env, cfg, 4)
    assert curve == []
    assert ag.actor == init.actor and ag.critic == init.critic


def test_training_is_deterministic():
    a, ca = train_dpg(_small_env(), SMALL, seed=2)
    b, cb = train_dpg(_small_env(), SMALL, seed=2)
    assert ca == cb
    assert a.actor.params.tobytes() == b.actor.params.tobytes()
    _, cc = train_dpg(_small_env(), SMALL, seed=3)
    assert cc != ca


def test_step_budget_respected():
    _, curve = train_dpg(_small_env(), DpgConfig(episodes=10, max_env_steps=55, warmup_steps=10, batch_size=8), seed=0)
    assert sum(row[3] for row in curve) == 55
    assert [row[0] for row in curve] == list(range(len(curve)))


# -- double-integrator toy ------------------------------------------------------------

DT, GAMMA, R_U, U_MAX = 0.2, 0.9, 0.1, 6.0
A_DI = np.array([[1.0, DT], [0.0, 1.0]])
B_DI = np.array([[0.0], [DT]])


def test_grid_oracle_agrees_with_riccati():
    K_vi = grid_vi_gain(DT, GAMMA, 1.0, 0.1, R_U, U_MAX)
    K_lqr = discounted_lqr_gain(A_DI, B_DI, np.diag([1.0, 0.1]), np.array([[R_U]]), GAMMA)[0]
    np.testing.assert_allclose(K_vi, K_lqr, rtol=0.02)


@pytest.mark.slow
def test_double_integrator_gain_near_optimal():
    """Off-policy DPG with a linear actor on a discounted double integrator."""
    rng = np.random.default_rng(0)
    actor = Mlp((2, 1), ("linear",))
    critic = approx.init((3, 64, 64, 1), ("tanh", "tanh", "linear"), seed=0)
    ag = DpgAgent(actor, critic, actor.copy(), critic.copy(), np.array([U_MAX]), GAMMA, 0.01, 0.0, Adam(1e-4), Adam(1e-3))
    steps = 15_000
    buf = PrioritizedBuffer(steps, 2, 1, alpha=0.6)
    for k in range(steps):
        s, u = rng.uniform(-1.0, 1.0, 2), rng.uniform(-U_MAX, U_MAX, 1)
        r = -(s[0] ** 2 + 0.1 * s[1] ** 2 + R_U * u[0] ** 2)
        buf.add(Transition(s, u, r, A_DI @ s + B_DI[:, 0] * u[0], False))
        if k >= 500:
            batch, idx, w = buf.sample(64, rng, 0.4 + 0.6 * k / steps)
            buf.update_priorities(idx, critic_update(ag, batch, w))
            actor_update(ag, batch)
            soft_update(ag)
    learned = -ag.actor.params[:2] * U_MAX
    oracle = grid_vi_gain(DT, GAMMA, 1.0, 0.1, R_U, U_MAX)
    np.testing.assert_allclose(learned, oracle, rtol=0.15)
