"""Deterministic policy gradient actor-critic with prioritized experience replay.

The actor maps observations to normalised actions in [-1, 1] (tanh head);
physical thrusts are that output times the thrust limit. The critic sees the
observation concatenated with the normalised action. Replay priorities are
absolute TD errors plus a floor, sampled proportionally through a sum-tree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from auvrl import DomainError, NumericAbort
from auvrl import approx
from auvrl.approx import Adam, Mlp
from auvrl.rollout import child_rngs, run_episode


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    u: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    u: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)

    @classmethod
    def from_transitions(cls, ts) -> "Batch":
        return cls(
            np.array([t.s for t in ts], dtype=float),
            np.array([t.u for t in ts], dtype=float),
            np.array([t.r for t in ts], dtype=float),
            np.array([t.s_next for t in ts], dtype=float),
            np.array([t.done for t in ts], dtype=float),
        )


class SumTree:
    """Binary sum-tree over ``capacity`` leaves (padded to a power of two).

    Internal nodes are recomputed as the sum of their two children on every
    write, so rounding error does not accumulate across updates.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        self.capacity = capacity
        self.n_leaves = 1 << max(0, (capacity - 1).bit_length())
        self.tree = np.zeros(2 * self.n_leaves - 1)

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def leaves(self) -> np.ndarray:
        return self.tree[self.n_leaves - 1 : self.n_leaves - 1 + self.capacity]

    def update(self, indices, values) -> None:
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64)) + self.n_leaves - 1
        self.tree[idx] = np.atleast_1d(values)
        if idx.size == 1:
            i, t = int(idx[0]), self.tree
            while i > 0:
                i = (i - 1) // 2
                t[i] = t[2 * i + 1] + t[2 * i + 2]
            return
        while idx[0] > 0:
            idx = np.unique((idx - 1) // 2)
            self.tree[idx] = self.tree[2 * idx + 1] + self.tree[2 * idx + 2]

    def find(self, values) -> np.ndarray:
        """Leaf index for each cumulative-mass value in [0, total)."""
        v = np.array(values, dtype=float)
        idx = np.zeros(v.shape, dtype=np.int64)
        while idx[0] < self.n_leaves - 1:
            left = 2 * idx + 1
            go_right = v >= self.tree[left]
            v = np.where(go_right, v - self.tree[left], v)
            idx = np.where(go_right, left + 1, left)
        return idx - (self.n_leaves - 1)


class PrioritizedBuffer:
    """Bounded FIFO replay store with proportional prioritized sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, alpha: float = 0.6, eps: float = 1e-3):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.u = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.priorities = np.zeros(capacity)
        self.max_priority = 1.0
        self.pos = 0
        self.size = 0
        self.n_inserted = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition, priority: float | None = None) -> int:
        """Store ``t``, evicting the oldest entry when full; new entries get the max priority seen."""
        i = self.pos
        self.s[i], self.u[i], self.r[i], self.s_next[i], self.done[i] = t.s, t.u, t.r, t.s_next, float(t.done)
        p = self.max_priority if priority is None else max(float(priority), self.eps)
        self.max_priority = max(self.max_priority, p)
        self.priorities[i] = p
        self.tree.update(i, p**self.alpha)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.n_inserted += 1
        return i

    def update_priorities(self, indices, td_abs) -> None:
        p = np.abs(np.asarray(td_abs, dtype=float)) + self.eps
        self.priorities[indices] = p
        self.max_priority = max(self.max_priority, float(p.max()))
        self.tree.update(indices, p**self.alpha)

    def probabilities(self) -> np.ndarray:
        mass = self.tree.leaves()[: self.size]
        return mass / mass.sum()

    def sample(self, M: int, rng, beta: float = 0.4):
        """Stratified proportional draw of ``M`` entries.

        Returns ``(batch, indices, weights)`` with importance weights
        ``(N * P(i)) ** -beta`` scaled by their maximum.
        """
        if self.size < M or M < 1:
            raise DomainError(f"cannot sample {M} transitions from a buffer holding {self.size}")
        total = self.tree.total
        bounds = np.linspace(0.0, total, M + 1)
        v = rng.uniform(bounds[:-1], bounds[1:])
        v = np.minimum(v, np.nextafter(total, 0.0))
        idx = self.tree.find(v)
        idx = np.minimum(idx, self.size - 1)
        mass = self.tree.leaves()[idx]
        # rounding can land on an empty leaf at the boundary; fall back to the last filled slot
        bad = mass <= 0
        if bad.any():
            filled = np.flatnonzero(self.tree.leaves()[: self.size] > 0)
            idx[bad] = filled[-1]
            mass = self.tree.leaves()[idx]
        P = mass / total
        w = (self.size * P) ** (-beta)
        w /= w.max()
        return self.batch(idx), idx, w

    def batch(self, idx) -> Batch:
        return Batch(self.s[idx], self.u[idx], self.r[idx], self.s_next[idx], self.done[idx])

    def transition(self, i: int) -> Transition:
        return Transition(self.s[i].copy(), self.u[i].copy(), float(self.r[i]), self.s_next[i].copy(), bool(self.done[i]))


def buffer_sample(buffer: PrioritizedBuffer, M: int, rng, beta: float = 0.4):
    return buffer.sample(M, rng, beta)


@dataclass
class DpgConfig:
    episodes: int = 200
    max_env_steps: int = 200_000
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64, 32)
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    alpha_per: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    eps_priority: float = 1e-3
    sigma_explore: float = 0.2  # fraction of the thrust limit
    warmup_steps: int = 1000
    reward_scale: float = 1.0
    obs_scale: tuple | None = None  # per-component divisor applied before the networks


@dataclass
class DpgAgent:
    actor: Mlp
    critic: Mlp
    actor_target: Mlp
    critic_target: Mlp
    action_limit: np.ndarray
    gamma: float = 0.99
    tau: float = 0.005
    sigma: float = 0.2
    actor_opt: Adam = field(default_factory=Adam)
    critic_opt: Adam = field(default_factory=Adam)
    obs_scale: np.ndarray | None = None

    @property
    def obs_dim(self) -> int:
        return self.actor.n_in

    @property
    def act_dim(self) -> int:
        return self.actor.n_out

    def norm_obs(self, s):
        s = np.asarray(s, dtype=float)
        return s if self.obs_scale is None else s / self.obs_scale

    def critic_input(self, s, a_norm):
        return np.concatenate([self.norm_obs(s), a_norm], axis=-1)

    def q(self, s, u, target: bool = False):
        """Critic value for observations ``s`` and physical actions ``u``."""
        net = self.critic_target if target else self.critic
        return approx.forward(net, self.critic_input(s, np.asarray(u) / self.action_limit))[..., 0]

    def mu(self, s, target: bool = False):
        """Deterministic physical action."""
        net = self.actor_target if target else self.actor
        return approx.forward(net, self.norm_obs(s)) * self.action_limit


def make_agent(obs_dim, act_dim, action_limit, cfg: DpgConfig = DpgConfig(), seed: int = 0) -> DpgAgent:
    rng = np.random.default_rng(seed)
    s_actor, s_critic = (int(x) for x in rng.integers(0, 2**31, size=2))
    actor = approx.init(
        (obs_dim, *cfg.actor_hidden, act_dim), ("relu",) * len(cfg.actor_hidden) + ("tanh",), s_actor, output_scale=0.1
    )
    critic = approx.init(
        (obs_dim + act_dim, *cfg.critic_hidden, 1), ("relu",) * len(cfg.critic_hidden) + ("linear",), s_critic
    )
    return DpgAgent(
        actor, critic, actor.copy(), critic.copy(), np.broadcast_to(np.asarray(action_limit, float), (act_dim,)).copy(),
        cfg.gamma, cfg.tau, cfg.sigma_explore, Adam(cfg.actor_lr), Adam(cfg.critic_lr),
        None if cfg.obs_scale is None else np.asarray(cfg.obs_scale, dtype=float),
    )


def act(agent: DpgAgent, obs, explore: bool, rng=None) -> np.ndarray:
    u = agent.mu(obs)
    if explore and agent.sigma > 0:
        u = u + rng.normal(0.0, agent.sigma, size=u.shape) * agent.action_limit
    return np.clip(u, -agent.action_limit, agent.action_limit)


def td_errors(agent: DpgAgent, batch: Batch) -> np.ndarray:
    """Signed TD errors ``target - Q(s, u)``, bootstrapping through the target networks."""
    y = td_targets(agent, batch)
    return y - agent.q(batch.s, batch.u)


def td_targets(agent: DpgAgent, batch: Batch) -> np.ndarray:
    nxt = agent.q(batch.s_next, agent.mu(batch.s_next, target=True), target=True)
    return batch.r + agent.gamma * (1.0 - batch.done) * nxt


def priority(agent: DpgAgent, t: Transition, eps: float = 1e-3) -> float:
    return float(abs(td_errors(agent, Batch.from_transitions([t]))[0]) + eps)


def critic_update(agent: DpgAgent, batch: Batch, weights=None) -> np.ndarray:
    """One optimizer step on the importance-weighted squared TD error; returns pre-update |TD errors|."""
    M = len(batch)
    w = np.ones(M) if weights is None else np.asarray(weights, dtype=float)
    y = td_targets(agent, batch)
    x = agent.critic_input(batch.s, batch.u / agent.action_limit)
    q = approx.forward(agent.critic, x)[:, 0]
    delta = q - y
    loss = float(np.mean(w * delta**2))
    if not math.isfinite(loss):
        raise NumericAbort("non-finite critic loss", {"loss": loss, "q": q.tolist(), "targets": y.tolist()})
    grad = approx.backward(agent.critic, x, (2.0 * w * delta / M)[:, None]).params
    agent.critic_opt.step(agent.critic.params, grad)
    return np.abs(delta)


def weighted_td_loss(agent: DpgAgent, batch: Batch, weights=None) -> float:
    w = np.ones(len(batch)) if weights is None else np.asarray(weights)
    return float(np.mean(w * td_errors(agent, batch) ** 2))


def policy_gradient(agent: DpgAgent, states) -> np.ndarray:
    """Sampled deterministic policy gradient of ``mean_i Q(s_i, mu(s_i))`` w.r.t. actor parameters."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    M = s.shape[0]
    xs = agent.norm_obs(s)
    a = approx.forward(agent.actor, xs)
    dq = approx.backward(agent.critic, agent.critic_input(s, a), np.full((M, 1), 1.0 / M)).inputs
    dq_da = dq[:, agent.obs_dim :]
    return approx.backward(agent.actor, xs, dq_da).params


def actor_update(agent: DpgAgent, batch: Batch) -> float:
    """Ascend the sampled deterministic policy gradient; returns its norm."""
    g = policy_gradient(agent, batch.s)
    agent.actor_opt.step(agent.actor.params, -g)
    return float(np.linalg.norm(g))


def soft_update(agent: DpgAgent) -> None:
    t = agent.tau
    agent.actor_target.params[:] = (1.0 - t) * agent.actor_target.params + t * agent.actor.params
    agent.critic_target.params[:] = (1.0 - t) * agent.critic_target.params + t * agent.critic.params


def agent_to_dict(agent: DpgAgent) -> dict:
    return {
        "kind": "dpg",
        "actor": approx.to_dict(agent.actor),
        "critic": approx.to_dict(agent.critic),
        "actor_target": approx.to_dict(agent.actor_target),
        "critic_target": approx.to_dict(agent.critic_target),
        "action_limit": agent.action_limit.tolist(),
        "gamma": agent.gamma,
        "tau": agent.tau,
        "sigma": agent.sigma,
        "obs_scale": None if agent.obs_scale is None else agent.obs_scale.tolist(),
    }


def agent_from_dict(d: dict) -> DpgAgent:
    return DpgAgent(
        approx.from_dict(d["actor"]),
        approx.from_dict(d["critic"]),
        approx.from_dict(d["actor_target"]),
        approx.from_dict(d["critic_target"]),
        np.asarray(d["action_limit"], dtype=float),
        d["gamma"],
        d["tau"],
        d["sigma"],
        obs_scale=None if d.get("obs_scale") is None else np.asarray(d["obs_scale"], dtype=float),
    )


def initial_agent(env, cfg: DpgConfig, seed: int) -> DpgAgent:
    """The agent :func:`train_dpg` starts from for this seed."""
    init_seed = int(child_rngs(seed)["init"].integers(2**31))
    return make_agent(env.obs_dim, env.act_dim, env.action_limit, cfg, init_seed)


def train_dpg(env, cfg: DpgConfig = DpgConfig(), seed: int = 0, prefill=(), callback=None):
    """Seeded actor-critic training loop.

    ``prefill`` transitions (e.g. from a PID controller) are inserted before
    the first episode. ``callback(episode, agent)`` runs after every episode
    and may return True to stop early. Returns ``(agent, curve)`` where curve
    rows are ``(episode, return, metric, steps)``.
    """
    rngs = child_rngs(seed)
    agent = initial_agent(env, cfg, seed)
    env.rng = rngs["env"]
    buf = PrioritizedBuffer(cfg.buffer_capacity, env.obs_dim, env.act_dim, cfg.alpha_per, cfg.eps_priority)
    for t in prefill:
        buf.add(Transition(t.s, t.u, t.r * cfg.reward_scale, t.s_next, t.done))
    curve = []
    total_steps = 0
    budget = max(cfg.max_env_steps, 1)
    is_depth = hasattr(env, "abs_dz")
    for ep in range(cfg.episodes):
        if total_steps >= cfg.max_env_steps:
            break
        s = env.reset()
        ret, steps, acc, done = 0.0, 0, 0.0, False
        while not done:
            u = act(agent, s, True, rngs["exploration"])
            s2, r, done = env.step(u)
            buf.add(Transition(s, u, r * cfg.reward_scale, s2, done))
            ret += r
            acc += env.abs_dz() if is_depth else r
            steps += 1
            total_steps += 1
            s = s2
            if len(buf) >= max(cfg.batch_size, cfg.warmup_steps):
                frac = min(1.0, total_steps / budget)
                beta = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start)
                batch, idx, w = buf.sample(cfg.batch_size, rngs["sampling"], beta)
                td = critic_update(agent, batch, w)
                buf.update_priorities(idx, td)
                actor_update(agent, batch)
                soft_update(agent)
            if total_steps >= cfg.max_env_steps:
                break
        curve.append((ep, ret, acc / max(steps, 1), steps))
        if callback is not None and callback(ep, agent):
            break
    return agent, curve


def greedy_policy(agent: DpgAgent):
    return lambda obs: act(agent, obs, explore=False)


def evaluate_agent(agent: DpgAgent, env, episodes: int):
    return [run_episode(env, greedy_policy(agent)) for _ in range(episodes)]


def config_dict(cfg: DpgConfig) -> dict:
    return asdict(cfg)
