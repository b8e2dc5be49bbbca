"""Value-based learning on finite MDPs: TD targets, Monte Carlo evaluation, value iteration."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from auvrl import ConfigError, DomainError


@dataclass
class FiniteMdp:
    """Transition tensor ``P[s, a, s']``, expected rewards ``R[s, a]``, discount, start distribution."""

    P: np.ndarray
    R: np.ndarray
    gamma: float
    rho0: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        S, A, S2 = self.P.shape
        if S != S2 or self.R.shape != (S, A):
            raise DomainError(f"inconsistent shapes P{self.P.shape} R{self.R.shape}")
        if np.abs(self.P.sum(axis=2) - 1.0).max() > 1e-12 or self.P.min() < 0:
            raise DomainError("each p(.|s,a) must be a probability distribution")
        if not 0 < self.gamma <= 1:
            raise DomainError("gamma must lie in (0, 1]")
        if self.rho0 is None:
            self.rho0 = np.full(S, 1.0 / S)
        if not np.all(np.isfinite(self.R)):
            raise DomainError("rewards must be finite")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


def greedy_action(row, atol: float = 0.0) -> int:
    """Index of the largest entry; entries within ``atol`` of the max count as ties, lowest index wins."""
    row = np.asarray(row)
    return int(np.flatnonzero(row >= row.max() - atol)[0])


def greedy_policy(Q, atol: float = 0.0) -> np.ndarray:
    return np.array([greedy_action(r, atol) for r in np.asarray(Q)])


def td_target(Q, r, s_next, done, gamma, rule="qlearning", a_next=None) -> float:
    if done:
        return float(r)
    if rule == "qlearning":
        return float(r + gamma * np.max(Q[s_next]))
    if rule == "sarsa":
        if a_next is None:
            raise DomainError("the SARSA target needs the next action")
        return float(r + gamma * Q[s_next, a_next])
    raise DomainError(f"unknown TD rule {rule!r}")


def td_update(Q, transition, alpha, gamma, rule="qlearning", next_action=None) -> np.ndarray:
    """Return a copy of ``Q`` with ``Q[s, a] += alpha * (target - Q[s, a])``.

    ``transition`` is ``(s, a, r, s_next, done)``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    if rule == "sarsa" and next_action is None:
        raise DomainError("the SARSA rule requires next_action")
    s, a, r, s_next, done = transition
    out = np.array(Q, dtype=float, copy=True)
    y = td_target(out, r, s_next, done, gamma, rule, next_action)
    out[s, a] += alpha * (y - out[s, a])
    return out


def epsilon_greedy(Q, state, epsilon, rng) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError("epsilon must lie in [0, 1]")
    n_actions = Q.shape[1]
    if rng.random() < epsilon:
        return int(rng.integers(n_actions))
    return greedy_action(Q[state])


def mc_evaluate(episodes, gamma) -> dict:
    """First-visit Monte Carlo state values.

    Each episode is a sequence of ``(state, reward)`` pairs, the reward being
    the one received after leaving that state.
    """
    episodes = list(episodes)
    if not episodes:
        raise DomainError("mc_evaluate needs at least one episode")
    totals, counts = defaultdict(float), defaultdict(int)
    for ep in episodes:
        G = 0.0
        returns = []
        for s, r in reversed(ep):
            G = r + gamma * G
            returns.append((s, G))
        seen = set()
        for s, g in reversed(returns):
            if s not in seen:
                seen.add(s)
                totals[s] += g
                counts[s] += 1
    return {s: totals[s] / counts[s] for s in totals}


def bellman_optimality(mdp: FiniteMdp, V) -> np.ndarray:
    """One backup ``Q(s, a) = r(s, a) + gamma * sum_s' p(s'|s, a) V(s')``."""
    return mdp.R + mdp.gamma * mdp.P @ V


def value_iteration(mdp: FiniteMdp, tol: float = 1e-10, V0=None, max_iter: int = 1_000_000):
    """Return ``(V*, Q*, greedy policy)`` with ``V`` within ``tol`` of the fixed point (so the Bellman residual is below ``tol`` too)."""
    if mdp.gamma >= 1.0:
        raise ConfigError("value iteration requires gamma < 1")
    V = np.zeros(mdp.n_states) if V0 is None else np.asarray(V0, dtype=float).copy()
    # a residual of tol * (1 - gamma) puts V within tol of V* in sup norm
    stop = tol * (1.0 - mdp.gamma)
    for _ in range(max_iter):
        V = bellman_optimality(mdp, V).max(axis=1)
        if bellman_residual(mdp, V) <= stop:
            break
    Q = bellman_optimality(mdp, V)
    return V, Q, greedy_policy(Q)


def bellman_residual(mdp: FiniteMdp, V) -> float:
    return float(np.abs(bellman_optimality(mdp, V).max(axis=1) - V).max())


def policy_evaluation(mdp: FiniteMdp, policy) -> np.ndarray:
    """Exact ``V^pi`` by solving ``(I - gamma P_pi) V = r_pi``.

    ``policy`` is either an array of action indices or an ``|S| x |A|`` matrix of probabilities.
    """
    pi = np.asarray(policy)
    S = mdp.n_states
    if pi.ndim == 1:
        pi = np.eye(mdp.n_actions)[pi]
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    r_pi = (pi * mdp.R).sum(axis=1)
    return np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r_pi)


def q_learning(world, episodes: int, rng, alpha0=1.0, alpha_min=0.5, alpha_decay=1e-3,
               epsilon=0.2, max_steps=200, Q0=None):
    """Epsilon-greedy Q-learning on a :class:`~auvrl.environments.GridWorld`.

    The step size decays per episode as ``max(alpha_min, alpha0 / (1 + alpha_decay * episode))``.
    Returns the learned table and per-episode ``(return, steps)`` pairs.
    """
    S, A = world.n_states, 4
    Q = np.zeros((S, A)) if Q0 is None else np.array(Q0, dtype=float)
    curve = []
    for ep in range(episodes):
        alpha = max(alpha_min, alpha0 / (1.0 + alpha_decay * ep))
        # exploring starts over free cells keep every state visited
        free = [c for c in (world.cell(i) for i in range(S)) if c not in world.obstacles and c != world.goal]
        cell = free[int(rng.integers(len(free)))] if ep % 2 else world.start
        ret, disc, steps = 0.0, 1.0, 0
        for steps in range(1, max_steps + 1):
            s = world.index(cell)
            a = epsilon_greedy(Q, s, epsilon, rng)
            nxt, r, done = world.step(cell, a)
            s2 = world.index(nxt)
            y = r if done else r + world.gamma * Q[s2].max()
            Q[s, a] += alpha * (y - Q[s, a])
            ret += disc * r
            disc *= world.gamma
            cell = nxt
            if done:
                break
        curve.append((ret, steps))
    return Q, curve


def write_qtable_csv(Q, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["state", "action", "value"])
        for s, row in enumerate(np.asarray(Q)):
            for a, v in enumerate(row):
                w.writerow([s, a, repr(float(v))])


def read_qtable_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    S = max(int(r["state"]) for r in rows) + 1
    A = max(int(r["action"]) for r in rows) + 1
    Q = np.zeros((S, A))
    for r in rows:
        Q[int(r["state"]), int(r["action"])] = float(r["value"])
    return Q
