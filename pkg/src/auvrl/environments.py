"""Control tasks built on the vehicle models.

* :class:`SeafloorEnv` -- hold a fixed altitude above a terrain profile using
  the vertical-plane model. Observations carry a short window of recent depth
  errors so the agent can anticipate the slope of the seafloor.
* :class:`PipeEnv` -- follow a straight pipe seen by a downward camera, using
  analytic features of the pipe's position in the camera footprint.
* :class:`GridWorld` -- a small deterministic way-point task for the tabular
  methods.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from auvrl import ConfigError, DomainError
from auvrl.dynamics import (
    DEFAULT_PARAMS,
    PlanarState,
    VehicleParams,
    VehicleState,
    clamp_input,
    step_planar,
    step_vertical,
)

# -- terrain -----------------------------------------------------------------

TERRAIN_KINDS = ("flat", "sine", "ramp", "fractal")

_TERRAIN_DEFAULTS = {
    "flat": {"depth": 10.0},
    "sine": {"offset": 10.0, "amplitude": 2.0, "wavelength": 50.0},
    "ramp": {"offset": 10.0, "slope": 0.05},
    "fractal": {"offset": 10.0, "amplitude": 2.0, "roughness": 0.6, "length": 200.0, "levels": 8},
}


@dataclass(frozen=True)
class TerrainProfile:
    """Seafloor depth (m, down-positive) as a function of along-track distance x (m)."""

    kind: str
    params: dict
    seed: int = 0
    _xs: np.ndarray | None = field(default=None, repr=False, compare=False)
    _zs: np.ndarray | None = field(default=None, repr=False, compare=False)

    def depth(self, x: float) -> float:
        p = self.params
        if self.kind == "flat":
            return float(p["depth"])
        if self.kind == "sine":
            return p["offset"] + p["amplitude"] * math.sin(2.0 * math.pi * x / p["wavelength"])
        if self.kind == "ramp":
            return p["offset"] + p["slope"] * x
        return float(np.interp(x, self._xs, self._zs))

    def sample(self, xs) -> np.ndarray:
        return np.array([self.depth(float(x)) for x in xs])


def _midpoint_displacement(levels, roughness, amplitude, rng):
    n = 2**levels
    z = np.zeros(n + 1)
    z[0], z[n] = rng.uniform(-amplitude, amplitude, size=2)
    step, scale = n, amplitude
    while step > 1:
        half = step // 2
        mids = np.arange(half, n, step)
        z[mids] = 0.5 * (z[mids - half] + z[mids + half]) + rng.uniform(-scale, scale, size=mids.size)
        scale *= roughness
        step = half
    return z


def terrain_generate(kind: str, params: dict | None = None, seed: int = 0) -> TerrainProfile:
    if kind not in TERRAIN_KINDS:
        raise ConfigError(f"unknown terrain kind {kind!r}; expected one of {TERRAIN_KINDS}")
    merged = dict(_TERRAIN_DEFAULTS[kind])
    unknown = set(params or {}) - set(merged)
    if unknown:
        raise ConfigError(f"unknown {kind} terrain parameter(s): {sorted(unknown)}")
    merged.update(params or {})
    if kind == "sine" and not merged["wavelength"] > 0:
        raise ConfigError("sine terrain needs wavelength > 0")
    if kind != "fractal":
        return TerrainProfile(kind, merged, seed)
    if not (0 < merged["roughness"] < 1) or merged["length"] <= 0 or int(merged["levels"]) < 1:
        raise ConfigError("fractal terrain needs 0 < roughness < 1, length > 0, levels >= 1")
    rng = np.random.default_rng(seed)
    levels = int(merged["levels"])
    zs = merged["offset"] + _midpoint_displacement(levels, merged["roughness"], merged["amplitude"], rng)
    xs = np.linspace(0.0, merged["length"], 2**levels + 1)
    return TerrainProfile(kind, merged, seed, xs, zs)


# -- seafloor tracking ---------------------------------------------------------


@dataclass(frozen=True)
class SeafloorRewardWeights:
    """Weights of the quadratic cost; all non-positive so the reward is a negated cost."""

    rho1: float = -1.0
    rho2: float = -0.1
    rho3: float = -0.1
    R: tuple = ((-0.01, 0.0), (0.0, -0.01))

    def __post_init__(self):
        if max(self.rho1, self.rho2, self.rho3) > 0:
            raise ConfigError("reward weights rho1..rho3 must be <= 0")
        R = np.asarray(self.R, dtype=float)
        if R.shape != (2, 2) or not np.allclose(R, R.T):
            raise ConfigError("R must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(R).max() > 1e-12:
            raise ConfigError("R must be negative semidefinite")
        object.__setattr__(self, "R", tuple(tuple(float(v) for v in row) for row in R))

    def reward(self, dz: float, w: float, q: float, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(self.rho1 * dz * dz + self.rho2 * w * w + self.rho3 * q * q + u @ np.asarray(self.R) @ u)


@dataclass(frozen=True)
class SeafloorConfig:
    n_history: int = 3
    z_r: float = 2.0  # commanded altitude above the seafloor (m)
    control_period: float = 0.5
    substeps: int = 5
    mission_length: float = 100.0  # along-track metres
    abort_dz: float = 10.0
    init_offset: float = 0.0  # initial depth error (m)
    init_offset_range: float = 0.0  # uniform jitter added to init_offset at reset
    weights: SeafloorRewardWeights = SeafloorRewardWeights()
    params: VehicleParams = DEFAULT_PARAMS

    def __post_init__(self):
        if self.n_history < 1:
            raise ConfigError("n_history must be >= 1")
        if self.substeps < 1 or not self.control_period > 0:
            raise ConfigError("control_period must be > 0 and substeps >= 1")
        if not self.abort_dz > 0 or not self.mission_length > 0:
            raise ConfigError("abort_dz and mission_length must be > 0")

    @property
    def max_steps(self) -> int:
        return int(round(self.mission_length / (self.params.surge * self.control_period)))


@dataclass(frozen=True)
class SeafloorObservation:
    dz_history: tuple  # oldest first
    cos_theta: float
    sin_theta: float
    w: float
    q: float

    def as_vector(self) -> np.ndarray:
        return np.array([*self.dz_history, self.cos_theta, self.sin_theta, self.w, self.q])

    @classmethod
    def from_vector(cls, v, n_history: int) -> "SeafloorObservation":
        v = [float(a) for a in v]
        if len(v) != n_history + 4:
            raise DomainError(f"expected observation of length {n_history + 4}, got {len(v)}")
        return cls(tuple(v[:n_history]), *v[n_history:])


SEAFLOOR_COLUMNS = ("t", "x_along", "seafloor_z", "target_z", "z", "theta", "w", "q", "u1", "u2", "reward")


class SeafloorEnv:
    """Altitude-keeping over terrain; ``reset``/``step`` return observation vectors."""

    def __init__(self, terrain: TerrainProfile, cfg: SeafloorConfig = SeafloorConfig(), seed: int = 0):
        self.terrain = terrain
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.done = True
        self.record = None

    @property
    def obs_dim(self) -> int:
        return self.cfg.n_history + 4

    @property
    def act_dim(self) -> int:
        return 2

    @property
    def action_limit(self) -> np.ndarray:
        return np.asarray(self.cfg.params.thrust_limit)

    def target_depth(self, x: float) -> float:
        return self.terrain.depth(x) - self.cfg.z_r

    def reset(self) -> np.ndarray:
        cfg = self.cfg
        offset = cfg.init_offset
        if cfg.init_offset_range > 0:
            offset += self.rng.uniform(-cfg.init_offset_range, cfg.init_offset_range)
        self.x, self.t, self.k = 0.0, 0.0, 0
        self.state = VehicleState(self.target_depth(0.0) + offset, 0.0, 0.0, 0.0)
        dz = self.state.z - self.target_depth(0.0)
        self.history = deque([dz] * cfg.n_history, maxlen=cfg.n_history)
        self.done = False
        self.record = self._row((0.0, 0.0), 0.0)
        return self.observation().as_vector()

    def observation(self) -> SeafloorObservation:
        s = self.state
        return SeafloorObservation(tuple(self.history), math.cos(s.theta), math.sin(s.theta), s.w, s.q)

    def step(self, action):
        if self.done:
            raise DomainError("step() called on a finished episode; call reset() first")
        cfg = self.cfg
        u = clamp_input(action, cfg.params)
        dt = cfg.control_period / cfg.substeps
        s = self.state
        for _ in range(cfg.substeps):
            s = step_vertical(s, u, cfg.params, dt)
        self.state = s
        self.k += 1
        self.t = self.k * cfg.control_period
        self.x = cfg.params.surge * self.t
        dz = s.z - self.target_depth(self.x)
        self.history.append(dz)
        reward = cfg.weights.reward(dz, s.w, s.q, u)
        self.done = self.k >= cfg.max_steps or abs(dz) > cfg.abort_dz
        self.record = self._row(u, reward)
        return self.observation().as_vector(), reward, self.done

    def _row(self, u, reward):
        s = self.state
        floor = self.terrain.depth(self.x)
        return {
            "t": self.t, "x_along": self.x, "seafloor_z": floor, "target_z": floor - self.cfg.z_r,
            "z": s.z, "theta": s.theta, "w": s.w, "q": s.q, "u1": u[0], "u2": u[1], "reward": reward,
        }

    def abs_dz(self) -> float:
        return abs(self.history[-1])


def seafloor_reset(terrain: TerrainProfile, z_r: float, cfg: SeafloorConfig = SeafloorConfig(), seed: int = 0):
    """Build an environment at altitude ``z_r`` and return it with its first observation."""
    env = SeafloorEnv(terrain, _replace(cfg, z_r=z_r), seed)
    env.reset()
    return env, env.observation()


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


# -- pipe following --------------------------------------------------------------


@dataclass(frozen=True)
class PipeGeometry:
    """A straight pipe and the camera's ground footprint.

    ``W`` spans the image x axis (vehicle lateral, starboard-positive) and
    ``H`` the image y axis (vehicle forward).
    """

    anchor: tuple = (0.0, 0.0)
    direction: tuple = (1.0, 0.0)
    W: float = 4.0
    H: float = 3.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ConfigError("pipe direction must be non-zero")
        object.__setattr__(self, "direction", tuple((d / n).tolist()))
        object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))
        if not (self.W > 0 and self.H > 0):
            raise ConfigError("footprint W and H must be > 0")

    @property
    def d_max(self) -> float:
        return math.hypot(self.W, self.H) / 2.0


def _wrap_half(a: float) -> float:
    """Map an angle to (-pi/2, pi/2]."""
    return a - math.pi * math.ceil((a - math.pi / 2) / math.pi)


def pipe_image_geometry(state: PlanarState, geom: PipeGeometry):
    """Foot of the perpendicular from the footprint centre to the pipe, and the pipe direction, in image axes."""
    c, s = math.cos(state.psi), math.sin(state.psi)
    # image x = starboard = (sin psi, -cos psi); image y = forward = (cos psi, sin psi)
    px, py = geom.anchor[0] - state.x, geom.anchor[1] - state.y
    ax, ay = px * s - py * c, px * c + py * s
    dx_w, dy_w = geom.direction
    dx, dy = dx_w * s - dy_w * c, dx_w * c + dy_w * s
    along = ax * dx + ay * dy
    return (ax - along * dx, ay - along * dy), (dx, dy)


def pipe_features(state: PlanarState, geom: PipeGeometry):
    """Return ``(d_c, theta_c, visible)`` for the pipe as seen from ``state``."""
    (fx, fy), (dx, dy) = pipe_image_geometry(state, geom)
    d_c = math.hypot(fx, fy)
    # normal to the pipe line; parallel to the distance line when d_c > 0
    theta_c = _wrap_half(math.atan2(dy, dx) - math.pi / 2)
    nx, ny = -dy, dx
    offset = abs(fx * nx + fy * ny)
    visible = offset <= 0.5 * geom.W * abs(nx) + 0.5 * geom.H * abs(ny)
    return d_c, theta_c, visible


@dataclass(frozen=True)
class PipeObservation:
    theta_c: float
    dc_norm: float
    foot_x: float  # signed distance-line components in image axes, over d_max
    foot_y: float
    u_s: float
    v_s: float
    r_s: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.theta_c, self.dc_norm, self.foot_x, self.foot_y, self.u_s, self.v_s, self.r_s])


def pipe_reward(u_s: float, theta_c: float, d_c: float, d_max: float) -> float:
    return u_s * (abs(math.cos(theta_c)) - d_c / d_max)


@dataclass(frozen=True)
class PipeConfig:
    geometry: PipeGeometry = PipeGeometry()
    lateral_offset: float = 1.0  # start position relative to the pipe, along its left normal (m)
    heading_offset: float = 0.3  # start heading relative to the pipe (rad)
    init_surge: float = 0.0
    init_jitter: float = 0.0  # uniform jitter scale applied to both offsets at reset (fraction)
    control_period: float = 0.5
    substeps: int = 5
    max_steps: int = 200
    params: VehicleParams = DEFAULT_PARAMS

    def __post_init__(self):
        if self.substeps < 1 or not self.control_period > 0 or self.max_steps < 1:
            raise ConfigError("control_period must be > 0, substeps and max_steps >= 1")


PIPE_COLUMNS = ("t", "x", "y", "psi", "u_s", "v_s", "r_s", "d_c", "theta_c", "visible", "u1", "u2", "reward")


class PipeEnv:
    def __init__(self, cfg: PipeConfig = PipeConfig(), seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.done = True
        self.record = None

    obs_dim = 7
    act_dim = 2

    @property
    def action_limit(self) -> np.ndarray:
        return np.asarray(self.cfg.params.thrust_limit)

    def reset(self) -> np.ndarray:
        cfg, g = self.cfg, self.cfg.geometry
        lat, head = cfg.lateral_offset, cfg.heading_offset
        if cfg.init_jitter > 0:
            lat *= 1.0 + self.rng.uniform(-cfg.init_jitter, cfg.init_jitter)
            head *= 1.0 + self.rng.uniform(-cfg.init_jitter, cfg.init_jitter)
        dx, dy = g.direction
        alpha = math.atan2(dy, dx)
        self.state = PlanarState(g.anchor[0] - lat * dy, g.anchor[1] + lat * dx, alpha + head, cfg.init_surge, 0.0, 0.0)
        self.k, self.t = 0, 0.0
        self.done = False
        self._features()
        self.record = self._row((0.0, 0.0), 0.0)
        return self.observation().as_vector()

    def _features(self):
        self.d_c, self.theta_c, self.visible = pipe_features(self.state, self.cfg.geometry)
        (self.fx, self.fy), _ = pipe_image_geometry(self.state, self.cfg.geometry)

    def observation(self) -> PipeObservation:
        s, dm = self.state, self.cfg.geometry.d_max
        return PipeObservation(self.theta_c, self.d_c / dm, self.fx / dm, self.fy / dm, s.u_s, s.v_s, s.r_s)

    def step(self, action):
        if self.done:
            raise DomainError("step() called on a finished episode; call reset() first")
        cfg = self.cfg
        u = clamp_input(action, cfg.params)
        dt = cfg.control_period / cfg.substeps
        s = self.state
        for _ in range(cfg.substeps):
            s = step_planar(s, u, cfg.params, dt)
        self.state = s
        self.k += 1
        self.t = self.k * cfg.control_period
        self._features()
        reward = pipe_reward(s.u_s, self.theta_c, self.d_c, cfg.geometry.d_max)
        self.done = (not self.visible) or self.k >= cfg.max_steps
        self.record = self._row(u, reward)
        return self.observation().as_vector(), reward, self.done

    def _row(self, u, reward):
        s = self.state
        return {
            "t": self.t, "x": s.x, "y": s.y, "psi": s.psi, "u_s": s.u_s, "v_s": s.v_s, "r_s": s.r_s,
            "d_c": self.d_c, "theta_c": self.theta_c, "visible": int(self.visible),
            "u1": u[0], "u2": u[1], "reward": reward,
        }


# -- grid world --------------------------------------------------------------------

ACTIONS = ("N", "S", "E", "W")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, 1), 3: (0, -1)}


@dataclass(frozen=True)
class GridWorld:
    """Deterministic grid; cells are ``(row, col)``. Every move costs ``step_reward``;
    entering the goal additionally pays ``goal_reward`` and ends the episode."""

    width: int = 5
    height: int = 5
    start: tuple = (4, 0)
    goal: tuple = (0, 4)
    obstacles: frozenset = frozenset()
    step_reward: float = -1.0
    goal_reward: float = 0.0
    gamma: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "obstacles", frozenset(tuple(o) for o in self.obstacles))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        for c in (self.start, self.goal):
            if not self.inside(c):
                raise ConfigError(f"cell {c} lies outside the {self.height}x{self.width} grid")
        if self.start in self.obstacles or self.goal in self.obstacles:
            raise ConfigError("start and goal must not be obstacles")
        if self.start not in self.distances_to_goal():
            raise ConfigError("goal is not reachable")

    def inside(self, cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def index(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, index: int) -> tuple:
        return divmod(index, self.width)

    def step(self, cell, action: int):
        if action not in _MOVES:
            raise DomainError(f"action must be one of 0..3 ({ACTIONS}), got {action!r}")
        cell = tuple(cell)
        if cell == self.goal:
            return cell, 0.0, True
        dr, dc = _MOVES[action]
        nxt = (cell[0] + dr, cell[1] + dc)
        if not self.inside(nxt) or nxt in self.obstacles:
            nxt = cell
        if nxt == self.goal:
            return nxt, self.step_reward + self.goal_reward, True
        return nxt, self.step_reward, False

    def distances_to_goal(self) -> dict:
        """Breadth-first move counts from every free cell to the goal."""
        dist = {self.goal: 0}
        frontier = deque([self.goal])
        while frontier:
            c = frontier.popleft()
            for dr, dc in _MOVES.values():
                n = (c[0] + dr, c[1] + dc)
                if self.inside(n) and n not in self.obstacles and n not in dist:
                    dist[n] = dist[c] + 1
                    frontier.append(n)
        return dist

    def to_mdp(self):
        from auvrl.tabular import FiniteMdp

        S, A = self.n_states, len(ACTIONS)
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for s in range(S):
            c = self.cell(s)
            for a in range(A):
                if c in self.obstacles:
                    P[s, a, s] = 1.0
                    continue
                n, r, _ = self.step(c, a)
                P[s, a, self.index(n)] = 1.0
                R[s, a] = r
        rho0 = np.zeros(S)
        rho0[self.index(self.start)] = 1.0
        return FiniteMdp(P, R, self.gamma, rho0)


def gridworld_step(world: GridWorld, cell, action: int):
    return world.step(cell, action)
