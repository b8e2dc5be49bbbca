"""Seeded random streams and frozen-policy evaluation shared by the trainers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STREAMS = ("env", "init", "exploration", "sampling", "eval")


def child_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def child_seed(seed: int, name: str) -> int:
    """A stable integer seed for stream ``name`` (for objects that take an int seed)."""
    ss = np.random.SeedSequence(seed).spawn(len(STREAMS))[STREAMS.index(name)]
    return int(ss.generate_state(1)[0])


def metric_name(env) -> str:
    return "mean_abs_dz" if hasattr(env, "abs_dz") else "mean_reward"


@dataclass
class EpisodeResult:
    ret: float
    steps: int
    metric: float
    visible_frac: float | None = None
    rows: list = field(default_factory=list)


def run_episode(env, policy, record: bool = False, max_steps: int | None = None) -> EpisodeResult:
    """Roll ``policy(obs) -> action`` for one episode.

    The metric is the mean |depth error| for depth tasks and the mean
    per-step reward otherwise. For pipe tasks ``visible_frac`` counts steps
    with the pipe in view over the full mission length, so early loss of the
    pipe counts the remaining steps as not visible.
    """
    obs = env.reset()
    rows = [dict(env.record)] if record else []
    ret, steps, acc, visible = 0.0, 0, 0.0, 0
    done = False
    while not done:
        obs, r, done = env.step(policy(obs))
        ret += r
        steps += 1
        acc += env.abs_dz() if hasattr(env, "abs_dz") else r
        if getattr(env, "visible", False):
            visible += 1
        if record:
            rows.append(dict(env.record))
        if max_steps is not None and steps >= max_steps:
            break
    vis = visible / env.cfg.max_steps if hasattr(env, "visible") else None
    return EpisodeResult(ret, steps, acc / max(steps, 1), vis, rows)


def evaluate(env, policy, episodes: int, record: bool = False) -> list[EpisodeResult]:
    return [run_episode(env, policy, record) for _ in range(episodes)]
