"""Decoupled rigid-body AUV models in the vertical and horizontal planes.

Both models are per-axis mass / linear+quadratic damping systems driven by a
pair of thrusters, integrated with fixed-step classical RK4. Coefficients in
:data:`DEFAULT_PARAMS` are placeholder values chosen for a small vehicle; the
learning code never depends on their specific magnitudes.

Sign conventions: ``z`` is depth (down-positive), so a positive heave force
pushes the vehicle deeper. Thruster 1 sits at ``+arm`` and thruster 2 at
``-arm`` from the centre, giving ``tau_w = F1 + F2`` and
``tau_q = arm * (F1 - F2)`` (vertical) or ``tau_u = F1 + F2`` and
``tau_r = arm * (F1 - F2)`` (planar).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from auvrl import DomainError

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return a - TWO_PI * math.ceil((a - math.pi) / TWO_PI)


@dataclass(frozen=True)
class VehicleState:
    """Vertical-plane state: depth z (m), pitch theta (rad), heave rate w (m/s), pitch rate q (rad/s)."""

    z: float
    theta: float
    w: float
    q: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z, self.theta, self.w, self.q])


@dataclass(frozen=True)
class PlanarState:
    """Horizontal-plane state: position (m), yaw psi (rad), body velocities u_s, v_s (m/s), yaw rate r_s (rad/s)."""

    x: float
    y: float
    psi: float
    u_s: float = 0.0
    v_s: float = 0.0
    r_s: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.u_s, self.v_s, self.r_s])


@dataclass(frozen=True)
class VehicleParams:
    # vertical plane: effective mass (kg) / inertia (kg m^2) incl. added mass
    m_w: float = 50.0
    I_q: float = 10.0
    d_w1: float = 25.0  # N s/m
    d_w2: float = 10.0  # N s^2/m^2
    d_q1: float = 5.0  # N m s
    d_q2: float = 2.0  # N m s^2
    k_theta: float = 8.0  # N m/rad, pitch restoring
    # horizontal plane
    m_u: float = 50.0
    m_v: float = 60.0
    I_r: float = 10.0
    d_u1: float = 25.0
    d_u2: float = 10.0
    d_v1: float = 30.0
    d_v2: float = 15.0
    d_r1: float = 5.0
    d_r2: float = 2.0
    # actuation
    thrust_limit: tuple[float, float] = (40.0, 40.0)  # N per thruster
    arm: float = 0.5  # m, thruster offset from centre
    surge: float = 1.0  # m/s, held constant in the vertical-plane task

    def __post_init__(self):
        for name in ("m_w", "I_q", "m_u", "m_v", "I_r"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        for name in ("d_w1", "d_w2", "d_q1", "d_q2", "d_u1", "d_u2", "d_v1", "d_v2", "d_r1", "d_r2", "k_theta"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be >= 0")
        object.__setattr__(self, "thrust_limit", tuple(float(t) for t in self.thrust_limit))
        if len(self.thrust_limit) != 2 or min(self.thrust_limit) <= 0:
            raise DomainError("thrust_limit must hold two positive values")
        if not self.arm > 0:
            raise DomainError("arm must be > 0")

    @property
    def allocation(self) -> np.ndarray:
        """Map from thruster forces (F1, F2) to generalized forces (collective, moment)."""
        return np.array([[1.0, 1.0], [self.arm, -self.arm]])

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown vehicle parameter(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["thrust_limit"] = list(self.thrust_limit)
        return out


DEFAULT_PARAMS = VehicleParams()


def clamp_input(u, params: VehicleParams) -> tuple[float, float]:
    """Validate a two-thruster command and saturate it to the thrust limits."""
    u = np.asarray(u, dtype=float)
    if u.shape != (2,):
        raise DomainError(f"control input must have 2 components, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise DomainError(f"non-finite control input {u.tolist()}")
    l1, l2 = params.thrust_limit
    return min(max(float(u[0]), -l1), l1), min(max(float(u[1]), -l2), l2)


def generalized_forces(u, params: VehicleParams) -> tuple[float, float]:
    """Collective force and moment produced by a (clamped) thruster command."""
    f1, f2 = clamp_input(u, params)
    return f1 + f2, params.arm * (f1 - f2)


def _check_state(values, dt):
    if not dt > 0 or not math.isfinite(dt):
        raise DomainError(f"dt must be a positive finite number, got {dt}")
    if not all(math.isfinite(v) for v in values):
        raise DomainError(f"non-finite state {values}")


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k1)))
    k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(y, k2)))
    k4 = f(tuple(a + dt * b for a, b in zip(y, k3)))
    return tuple(
        a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )


def step_vertical(state: VehicleState, u, params: VehicleParams = DEFAULT_PARAMS, dt: float = 0.1) -> VehicleState:
    """Advance the heave/pitch model by ``dt`` seconds with one RK4 step."""
    _check_state((state.z, state.theta, state.w, state.q), dt)
    tau_w, tau_q = generalized_forces(u, params)
    p = params

    def deriv(y):
        _, th, w, q = y
        return (
            w,
            q,
            (tau_w - p.d_w1 * w - p.d_w2 * w * abs(w)) / p.m_w,
            (tau_q - p.d_q1 * q - p.d_q2 * q * abs(q) - p.k_theta * math.sin(th)) / p.I_q,
        )

    z, th, w, q = _rk4(deriv, (state.z, state.theta, state.w, state.q), dt)
    return VehicleState(z, wrap_angle(th), w, q)


def step_planar(state: PlanarState, u, params: VehicleParams = DEFAULT_PARAMS, dt: float = 0.1) -> PlanarState:
    """Advance the surge/sway/yaw model by ``dt`` seconds with one RK4 step."""
    _check_state(tuple(state.as_array()), dt)
    tau_u, tau_r = generalized_forces(u, params)
    p = params

    def deriv(y):
        _, _, psi, us, vs, rs = y
        c, s = math.cos(psi), math.sin(psi)
        return (
            us * c - vs * s,
            us * s + vs * c,
            rs,
            (tau_u - p.d_u1 * us - p.d_u2 * us * abs(us)) / p.m_u,
            (-p.d_v1 * vs - p.d_v2 * vs * abs(vs)) / p.m_v,
            (tau_r - p.d_r1 * rs - p.d_r2 * rs * abs(rs)) / p.I_r,
        )

    x, y, psi, us, vs, rs = _rk4(deriv, tuple(state.as_array().tolist()), dt)
    return PlanarState(x, y, wrap_angle(psi), us, vs, rs)


def simulate(step, state, inputs, params: VehicleParams = DEFAULT_PARAMS, dt: float = 0.1) -> list:
    """Roll ``step`` over a sequence of inputs, returning all visited states including the first."""
    out = [state]
    for u in inputs:
        state = step(state, u, params, dt)
        out.append(state)
    return out
