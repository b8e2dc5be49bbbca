"""PID controllers: comparison baselines and warm-start action suppliers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from auvrl import ConfigError
from auvrl.dpg import Transition
from auvrl.environments import PipeObservation, SeafloorObservation


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    integral_bound: float = 1.0
    output_bound: float = 1.0

    def __post_init__(self):
        if not (self.integral_bound > 0 and self.output_bound > 0):
            raise ConfigError("PID bounds must be > 0")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def _clamp(x, b):
    return min(max(x, -b), b)


def pid_step(gains: PidGains, state: PidState, error: float, dt: float, derivative: float | None = None):
    """One PID update with integral clamping (anti-windup) and output saturation.

    ``derivative`` overrides the finite-difference estimate (use it to feed a
    measured rate); the first call without history uses zero.
    """
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    integral = _clamp(state.integral + error * dt, gains.integral_bound)
    if derivative is None:
        derivative = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    out = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return _clamp(out, gains.output_bound), PidState(integral, error)


def split_thrust(collective: float, moment: float, arm: float, limit) -> np.ndarray:
    """Invert the two-thruster allocation, then saturate each thruster."""
    f1 = 0.5 * collective + moment / (2.0 * arm)
    f2 = 0.5 * collective - moment / (2.0 * arm)
    lim = np.asarray(limit, dtype=float)
    return np.clip(np.array([f1, f2]), -lim, lim)


@dataclass(frozen=True)
class DepthAutopilotGains:
    depth: PidGains = PidGains(kp=60.0, ki=0.0, kd=60.0, integral_bound=5.0, output_bound=80.0)
    pitch: PidGains = PidGains(kp=20.0, ki=0.0, kd=8.0, integral_bound=1.0, output_bound=40.0)
    pitch_per_dz: float = 0.05  # rad of nose-up per metre too deep
    max_pitch: float = 0.2
    arm: float = 0.5
    thrust_limit: tuple = (40.0, 40.0)


def depth_autopilot(obs, gains: DepthAutopilotGains = DepthAutopilotGains(), states=None, dt: float = 0.5):
    """Cascade depth controller: depth error -> collective thrust, depth error -> desired pitch -> moment.

    ``obs`` is a :class:`SeafloorObservation` or its vector (history length
    inferred). Derivative terms use the measured heave and pitch rates. With
    ``states`` (a pair of :class:`PidState`) the integral terms are carried
    and ``(action, new_states)`` is returned; otherwise only the action.
    """
    if not isinstance(obs, SeafloorObservation):
        v = np.asarray(obs, dtype=float)
        obs = SeafloorObservation.from_vector(v, len(v) - 4)
    dz = obs.dz_history[-1]
    theta = math.atan2(obs.sin_theta, obs.cos_theta)
    sd, sp = states if states is not None else (PidState(), PidState())
    # positive heave force pushes deeper, so the depth error is -dz
    tau_w, sd = pid_step(gains.depth, sd, -dz, dt, derivative=-obs.w)
    theta_d = _clamp(gains.pitch_per_dz * dz, gains.max_pitch)
    tau_q, sp = pid_step(gains.pitch, sp, theta_d - theta, dt, derivative=-obs.q)
    u = split_thrust(tau_w, tau_q, gains.arm, gains.thrust_limit)
    return u if states is None else (u, (sd, sp))


class DepthAutopilot:
    """Stateful wrapper carrying the PID integrators across an episode."""

    def __init__(self, gains: DepthAutopilotGains = DepthAutopilotGains(), dt: float = 0.5):
        self.gains, self.dt = gains, dt
        self.reset()

    def reset(self):
        self.states = (PidState(), PidState())

    def __call__(self, obs):
        u, self.states = depth_autopilot(obs, self.gains, self.states, self.dt)
        return u


@dataclass(frozen=True)
class HeadingAutopilotGains:
    # tuned by grid search on the default straight-pipe scene
    yaw: PidGains = PidGains(kp=45.0, ki=0.0, kd=30.0, integral_bound=1.0, output_bound=40.0)
    lookahead: float = 3.0  # m, line-of-sight distance along the pipe
    cruise: float = 80.0  # N, collective thrust
    d_max: float = 2.5
    arm: float = 0.5
    thrust_limit: tuple = (40.0, 40.0)


class HeadingAutopilot:
    """Line-of-sight pipe follower on the camera features.

    The signed cross-track error comes from the distance line's image-x
    component; the yaw PID drives the relative pipe angle minus the
    line-of-sight correction to zero at a fixed cruise thrust.
    """

    def __init__(self, gains: HeadingAutopilotGains = HeadingAutopilotGains(), dt: float = 0.5):
        self.gains, self.dt = gains, dt
        self.reset()

    def reset(self):
        self.state = PidState()

    def __call__(self, obs):
        if not isinstance(obs, PipeObservation):
            obs = PipeObservation(*[float(a) for a in obs])
        g = self.gains
        cross = obs.foot_x * g.d_max  # > 0: pipe lies to starboard
        # positive yaw moment turns to port; the pipe angle is port-positive
        err = obs.theta_c - math.atan2(cross, g.lookahead)
        tau_r, self.state = pid_step(g.yaw, self.state, err, self.dt, derivative=-obs.r_s)
        return split_thrust(g.cruise, tau_r, g.arm, g.thrust_limit)


def warm_start_actions(pid, env, steps: int, noise: float = 0.0, rng=None) -> list[Transition]:
    """Roll a PID policy (plus optional Gaussian noise, as a fraction of the thrust limit) and collect transitions.

    Episodes are restarted as needed until ``steps`` transitions exist.
    """
    if steps <= 0:
        raise ConfigError("steps must be > 0")
    out = []
    limit = np.asarray(env.action_limit, dtype=float)
    while len(out) < steps:
        if hasattr(pid, "reset"):
            pid.reset()
        s = env.reset()
        done = False
        while not done and len(out) < steps:
            u = np.asarray(pid(s), dtype=float)
            if noise > 0:
                u = np.clip(u + rng.normal(0.0, noise, size=u.shape) * limit, -limit, limit)
            s2, r, done = env.step(u)
            out.append(Transition(s, u, r, s2, done))
            s = s2
    return out


def pid_policy_for(env):
    """The matching PID baseline for an environment instance."""
    if hasattr(env, "abs_dz"):
        p = env.cfg.params
        return DepthAutopilot(DepthAutopilotGains(arm=p.arm, thrust_limit=p.thrust_limit), env.cfg.control_period)
    p, g = env.cfg.params, env.cfg.geometry
    return HeadingAutopilot(
        HeadingAutopilotGains(d_max=g.d_max, arm=p.arm, thrust_limit=p.thrust_limit), env.cfg.control_period
    )
