"""Stochastic policy gradients: REINFORCE and PPO with a clipped surrogate.

Policies are diagonal Gaussians over a raw action ``u`` whose mean comes from
an :class:`~auvrl.approx.Mlp` and whose log standard deviations are free,
state-independent parameters. The environment receives
``tanh(u) * action_limit``. Because the squashing correction depends only on
the sample, likelihood ratios and score functions are computed on ``u``
directly; :func:`squashed_log_prob` gives the density of the bounded action.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from auvrl import ConfigError, NumericAbort
from auvrl import approx
from auvrl.approx import Adam, Mlp
from auvrl.rollout import child_rngs

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianPolicy:
    mean_net: Mlp
    log_std: np.ndarray
    action_limit: np.ndarray
    obs_scale: np.ndarray | None = None

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=float)
        self.action_limit = np.broadcast_to(np.asarray(self.action_limit, float), self.log_std.shape).copy()

    @property
    def n_params(self) -> int:
        return self.mean_net.params.size + self.log_std.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mean_net.params, self.log_std])

    def set_flat(self, theta) -> None:
        n = self.mean_net.params.size
        self.mean_net.params[:] = theta[:n]
        self.log_std[:] = theta[n:]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy(), self.action_limit.copy(), self.obs_scale)

    def norm_obs(self, s):
        s = np.asarray(s, dtype=float)
        return s if self.obs_scale is None else s / self.obs_scale

    def mean(self, s) -> np.ndarray:
        return approx.forward(self.mean_net, self.norm_obs(s))

    def sample(self, s, rng) -> np.ndarray:
        mu = self.mean(s)
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def to_action(self, u) -> np.ndarray:
        return np.tanh(u) * self.action_limit


def make_policy(obs_dim, act_dim, action_limit, hidden=(64, 64), activation="tanh", init_log_std=0.0,
                seed=0, obs_scale=None) -> GaussianPolicy:
    net = approx.init((obs_dim, *hidden, act_dim), (activation,) * len(hidden) + ("linear",), seed, output_scale=0.01)
    return GaussianPolicy(net, np.full(act_dim, float(init_log_std)), action_limit,
                          None if obs_scale is None else np.asarray(obs_scale, float))


def log_prob(policy: GaussianPolicy, s, u) -> np.ndarray:
    """Diagonal-Gaussian log-density of raw actions ``u`` (scalar for one sample, vector for a batch)."""
    mu = policy.mean(s)
    z = (np.asarray(u, dtype=float) - mu) * np.exp(-policy.log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(policy.log_std) - 0.5 * policy.log_std.size * LOG_2PI


def squashed_log_prob(policy: GaussianPolicy, s, a) -> np.ndarray:
    """Log-density of a bounded action ``a = tanh(u) * limit``."""
    y = np.clip(np.asarray(a, dtype=float) / policy.action_limit, -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(y)
    return log_prob(policy, s, u) - np.sum(np.log(policy.action_limit * (1.0 - y * y)), axis=-1)


def log_prob_grad(policy: GaussianPolicy, s, u, weights=None) -> np.ndarray:
    """Gradient of ``sum_i weights_i * log_prob(s_i, u_i)`` w.r.t. the flat policy parameters."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    w = np.ones(len(s)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    mu = policy.mean(s)
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = u - mu
    g_mu = w[:, None] * diff * inv_var
    g_net = approx.backward(policy.mean_net, policy.norm_obs(s), g_mu).params
    g_std = np.sum(w[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    return np.concatenate([g_net, g_std])


def entropy(policy: GaussianPolicy) -> float:
    """Closed-form entropy of the (state-independent covariance) Gaussian."""
    return float(np.sum(policy.log_std) + 0.5 * policy.log_std.size * (1.0 + LOG_2PI))


def reward_to_go(rewards, gamma) -> np.ndarray:
    out = np.zeros(len(rewards))
    G = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        G = rewards[t] + gamma * G
        out[t] = G
    return out


def reinforce_gradient(policy: GaussianPolicy, trajectories, gamma) -> np.ndarray:
    """Score-function gradient: mean over all steps of grad log pi(u_t|s_t) * G_t.

    Each trajectory is a sequence of ``(s, u, r)`` with ``u`` the raw sample.
    """
    S, U, G = [], [], []
    for traj in trajectories:
        rs = [r for _, _, r in traj]
        G.extend(reward_to_go(rs, gamma))
        S.extend(s for s, _, _ in traj)
        U.extend(u for _, u, _ in traj)
    return log_prob_grad(policy, np.array(S), np.array(U), np.array(G)) / len(G)


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """Generalised advantage estimates and value targets ``A + V`` for one rollout.

    ``values[t]`` is V(s_t); ``last_value`` bootstraps the state after the
    final step and is ignored when that step is terminal.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    T = len(r)
    v_next = np.append(v[1:], last_value)
    delta = r + gamma * (1.0 - d) * v_next - v
    adv = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = delta[t] + gamma * lam * (1.0 - d[t]) * acc
        adv[t] = acc
    return adv, adv + v


def ppo_ratio(policy: GaussianPolicy, logp_old, s, u) -> np.ndarray:
    return np.exp(log_prob(policy, s, u) - np.asarray(logp_old))


@dataclass
class PpoConfig:
    iterations: int = 100
    rollout_steps: int = 2048
    epochs: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    clip: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    gamma: float = 0.99
    lam: float = 0.95
    hidden: tuple = (64, 64)
    init_log_std: float = 0.0
    max_grad_norm: float | None = 0.5
    obs_scale: tuple | None = None
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if self.vf_coef < 0 or self.ent_coef < 0:
            raise ConfigError("loss coefficients must be >= 0")


@dataclass
class RolloutBatch:
    s: np.ndarray
    u: np.ndarray
    r: np.ndarray
    done: np.ndarray
    logp_old: np.ndarray
    v_old: np.ndarray
    adv: np.ndarray = None
    v_targ: np.ndarray = None

    def __len__(self):
        return len(self.r)

    def subset(self, idx) -> "RolloutBatch":
        return RolloutBatch(*(getattr(self, f)[idx] for f in
                              ("s", "u", "r", "done", "logp_old", "v_old", "adv", "v_targ")))


def clip_objective(ratio, adv, eps):
    """Per-sample ``min(w A, clip(w, 1-eps, 1+eps) A)`` and the mask where the unclipped term is chosen."""
    ratio, adv = np.asarray(ratio, float), np.asarray(adv, float)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return np.minimum(unclipped, clipped), unclipped <= clipped


def ppo_loss(policy: GaussianPolicy, value_net: Mlp, batch: RolloutBatch, cfg: PpoConfig, with_grad: bool = False):
    """Negated PPO objective ``-(L_clip - c_v * value_err + c_e * entropy)``.

    Returns ``(loss, components)``; with ``with_grad`` also the gradients for
    the flat policy parameters and the value network.
    """
    logp = log_prob(policy, batch.s, batch.u)
    ratio = np.exp(logp - batch.logp_old)
    per, active = clip_objective(ratio, batch.adv, cfg.clip)
    l_clip = float(np.mean(per))
    v = approx.forward(value_net, policy.norm_obs(batch.s))[:, 0]
    verr = v - batch.v_targ
    l_value = float(np.mean(verr**2))
    h = entropy(policy)
    loss = -(l_clip - cfg.vf_coef * l_value + cfg.ent_coef * h)
    comps = {"clip": l_clip, "value": l_value, "entropy": h}
    if not with_grad:
        return loss, comps
    N = len(batch)
    g_pol = -log_prob_grad(policy, batch.s, batch.u, active * ratio * batch.adv / N)
    g_pol[policy.mean_net.params.size:] -= cfg.ent_coef
    g_val = approx.backward(value_net, policy.norm_obs(batch.s), (cfg.vf_coef * 2.0 * verr / N)[:, None]).params
    return loss, comps, g_pol, g_val


def _clip_norm(g, max_norm):
    if max_norm is None:
        return g
    n = np.linalg.norm(g)
    return g * (max_norm / n) if n > max_norm else g


def collect_rollout(env, policy, value_net, steps, rng, state, curve, is_depth):
    """Gather ``steps`` transitions, continuing the episode held in ``state`` across calls."""
    S, U, R, D, LP, V = [], [], [], [], [], []
    for _ in range(steps):
        s = state["obs"]
        u = policy.sample(s, rng)
        S.append(s)
        U.append(u)
        LP.append(float(log_prob(policy, s, u)))
        V.append(float(approx.forward(value_net, policy.norm_obs(s))[0]))
        s2, r, done = env.step(policy.to_action(u))
        R.append(r)
        D.append(done)
        state["ret"] += r
        state["steps"] += 1
        state["acc"] += env.abs_dz() if is_depth else r
        if done:
            curve.append((len(curve), state["ret"], state["acc"] / state["steps"], state["steps"]))
            state.update(obs=env.reset(), ret=0.0, steps=0, acc=0.0)
        else:
            state["obs"] = s2
    last_v = float(approx.forward(value_net, policy.norm_obs(state["obs"]))[0])
    batch = RolloutBatch(np.array(S), np.array(U), np.array(R), np.array(D, float), np.array(LP), np.array(V))
    return batch, last_v


def make_value_net(obs_dim, hidden=(64, 64), seed=0) -> Mlp:
    return approx.init((obs_dim, *hidden, 1), ("tanh",) * len(hidden) + ("linear",), seed)


def initial_networks(env, cfg: PpoConfig, seed: int):
    """The ``(policy, value_net)`` pair :func:`train_ppo` starts from for this seed."""
    s_pol, s_val = (int(x) for x in child_rngs(seed)["init"].integers(0, 2**31, size=2))
    policy = make_policy(env.obs_dim, env.act_dim, env.action_limit, cfg.hidden, "tanh", cfg.init_log_std,
                         s_pol, cfg.obs_scale)
    return policy, make_value_net(env.obs_dim, cfg.hidden, s_val)


def train_ppo(env, cfg: PpoConfig = PpoConfig(), seed: int = 0, callback=None):
    """Seeded PPO loop; returns ``(policy, value_net, curve)`` with curve rows ``(episode, return, metric, steps)``.

    ``callback(iteration, policy, value_net)`` runs after every update phase
    and may return True to stop.
    """
    rngs = child_rngs(seed)
    policy, value_net = initial_networks(env, cfg, seed)
    opt_pol, opt_val = Adam(cfg.lr), Adam(cfg.lr)
    env.rng = rngs["env"]
    curve = []
    is_depth = hasattr(env, "abs_dz")
    state = {"obs": env.reset(), "ret": 0.0, "steps": 0, "acc": 0.0}
    for it in range(cfg.iterations):
        batch, last_v = collect_rollout(env, policy, value_net, cfg.rollout_steps, rngs["exploration"], state,
                                        curve, is_depth)
        adv, v_targ = compute_gae(batch.r, batch.v_old, batch.done, last_v, cfg.gamma, cfg.lam)
        batch.v_targ = v_targ
        if cfg.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch.adv = adv
        theta = policy.flat()
        for _ in range(cfg.epochs):
            perm = rngs["sampling"].permutation(len(batch))
            for start in range(0, len(batch), cfg.minibatch):
                mb = batch.subset(perm[start:start + cfg.minibatch])
                loss, comps, g_pol, g_val = ppo_loss(policy, value_net, mb, cfg, with_grad=True)
                if not math.isfinite(loss):
                    raise NumericAbort("non-finite PPO loss", {"iteration": it, **comps})
                opt_pol.step(theta, _clip_norm(g_pol, cfg.max_grad_norm))
                policy.set_flat(theta)
                opt_val.step(value_net.params, _clip_norm(g_val, cfg.max_grad_norm))
        if callback is not None and callback(it, policy, value_net):
            break
    return policy, value_net, curve


@dataclass
class ReinforceConfig:
    iterations: int = 100
    episodes_per_batch: int = 8
    lr: float = 1e-3
    gamma: float = 0.99
    hidden: tuple = (64, 64)
    init_log_std: float = 0.0
    obs_scale: tuple | None = None


def initial_reinforce_policy(env, cfg: ReinforceConfig, seed: int) -> GaussianPolicy:
    return make_policy(env.obs_dim, env.act_dim, env.action_limit, cfg.hidden, "tanh", cfg.init_log_std,
                       int(child_rngs(seed)["init"].integers(2**31)), cfg.obs_scale)


def train_reinforce(env, cfg: ReinforceConfig = ReinforceConfig(), seed: int = 0, callback=None):
    """Batch REINFORCE with reward-to-go; returns ``(policy, curve)``."""
    rngs = child_rngs(seed)
    policy = initial_reinforce_policy(env, cfg, seed)
    opt = Adam(cfg.lr)
    env.rng = rngs["env"]
    is_depth = hasattr(env, "abs_dz")
    curve = []
    theta = policy.flat()
    for it in range(cfg.iterations):
        trajs = []
        for _ in range(cfg.episodes_per_batch):
            s, done, traj, acc = env.reset(), False, [], 0.0
            while not done:
                u = policy.sample(s, rngs["exploration"])
                s2, r, done = env.step(policy.to_action(u))
                traj.append((s, u, r))
                acc += env.abs_dz() if is_depth else r
                s = s2
            trajs.append(traj)
            curve.append((len(curve), sum(r for _, _, r in traj), acc / len(traj), len(traj)))
        g = reinforce_gradient(policy, trajs, cfg.gamma)
        if not np.all(np.isfinite(g)):
            raise NumericAbort("non-finite REINFORCE gradient", {"iteration": it})
        opt.step(theta, -g)
        policy.set_flat(theta)
        if callback is not None and callback(it, policy):
            break
    return policy, curve


def deterministic_policy(policy: GaussianPolicy):
    return lambda obs: policy.to_action(policy.mean(obs))


def policy_to_dict(policy: GaussianPolicy) -> dict:
    return {
        "mean_net": approx.to_dict(policy.mean_net),
        "log_std": policy.log_std.tolist(),
        "action_limit": policy.action_limit.tolist(),
        "obs_scale": None if policy.obs_scale is None else policy.obs_scale.tolist(),
    }


def policy_from_dict(d: dict) -> GaussianPolicy:
    return GaussianPolicy(
        approx.from_dict(d["mean_net"]), np.asarray(d["log_std"], float), np.asarray(d["action_limit"], float),
        None if d.get("obs_scale") is None else np.asarray(d["obs_scale"], float),
    )


def config_dict(cfg) -> dict:
    return asdict(cfg)
