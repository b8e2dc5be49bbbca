"""Run configuration: a TOML document validated against a strict schema.

Every section is optional except the top-level ``algorithm``, ``env`` and
``seed`` keys; unknown keys anywhere are rejected. The resolved config (all
defaults filled in) is what gets written into a run directory.
"""

from __future__ import annotations

from typing import Literal, Optional

import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from auvrl import ConfigError
from auvrl import baselines, dpg, environments, pg
from auvrl.dynamics import VehicleParams


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class VehicleSection(_Section):
    # placeholder coefficients for a small two-thruster vehicle; units per dynamics.VehicleParams
    m_w: float = 50.0
    I_q: float = 10.0
    d_w1: float = 25.0
    d_w2: float = 10.0
    d_q1: float = 5.0
    d_q2: float = 2.0
    k_theta: float = 8.0
    m_u: float = 50.0
    m_v: float = 60.0
    I_r: float = 10.0
    d_u1: float = 25.0
    d_u2: float = 10.0
    d_v1: float = 30.0
    d_v2: float = 15.0
    d_r1: float = 5.0
    d_r2: float = 2.0
    thrust_limit: tuple[float, float] = (40.0, 40.0)
    arm: float = 0.5
    surge: float = 1.0


class TerrainSection(_Section):
    kind: Literal["flat", "sine", "ramp", "fractal"] = "sine"
    seed: int = 0
    depth: Optional[float] = None
    offset: Optional[float] = None
    amplitude: Optional[float] = None
    wavelength: Optional[float] = None
    slope: Optional[float] = None
    roughness: Optional[float] = None
    length: Optional[float] = None
    levels: Optional[int] = None


class SeafloorSection(_Section):
    n_history: int = Field(3, ge=1)
    z_r: float = 2.0
    control_period: float = Field(0.5, gt=0)
    substeps: int = Field(5, ge=1)
    mission_length: float = Field(100.0, gt=0)
    abort_dz: float = Field(10.0, gt=0)
    init_offset: float = 0.0
    init_offset_range: float = Field(0.0, ge=0)
    rho1: float = Field(-1.0, le=0)
    rho2: float = Field(-0.1, le=0)
    rho3: float = Field(-0.1, le=0)
    R: tuple[tuple[float, float], tuple[float, float]] = ((-0.01, 0.0), (0.0, -0.01))


class PipeSection(_Section):
    anchor: tuple[float, float] = (0.0, 0.0)
    direction: tuple[float, float] = (1.0, 0.0)
    W: float = Field(4.0, gt=0)
    H: float = Field(3.0, gt=0)
    lateral_offset: float = 1.0
    heading_offset: float = 0.3
    init_surge: float = 0.0
    init_jitter: float = Field(0.0, ge=0)
    control_period: float = Field(0.5, gt=0)
    substeps: int = Field(5, ge=1)
    max_steps: int = Field(200, ge=1)


class GridSection(_Section):
    width: int = Field(5, ge=1)
    height: int = Field(5, ge=1)
    start: tuple[int, int] = (4, 0)
    goal: tuple[int, int] = (0, 4)
    obstacles: list[tuple[int, int]] = [(1, 3), (2, 1), (3, 3)]
    step_reward: float = -1.0
    goal_reward: float = 0.0
    gamma: float = Field(0.9, gt=0, le=1)


class TabularSection(_Section):
    episodes: int = Field(3000, ge=0)
    alpha0: float = Field(1.0, ge=0, le=1)
    alpha_min: float = Field(0.5, ge=0, le=1)
    alpha_decay: float = Field(1e-3, ge=0)
    epsilon: float = Field(0.2, ge=0, le=1)
    max_steps: int = Field(200, ge=1)


class DpgSection(_Section):
    episodes: int = Field(200, ge=0)
    max_env_steps: int = Field(200_000, ge=0)
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64, 32)
    gamma: float = Field(0.99, gt=0, le=1)
    tau: float = Field(0.005, gt=0, le=1)
    actor_lr: float = Field(1e-4, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(100_000, ge=1)
    alpha_per: float = Field(0.6, ge=0)
    beta_start: float = Field(0.4, ge=0, le=1)
    beta_end: float = Field(1.0, ge=0, le=1)
    eps_priority: float = Field(1e-3, gt=0)
    sigma_explore: float = Field(0.2, ge=0)
    warmup_steps: int = Field(1000, ge=0)
    reward_scale: float = Field(1.0, gt=0)
    obs_scale: Optional[tuple[float, ...]] = None
    pid_prefill: int = Field(0, ge=0)


class PpoSection(_Section):
    iterations: int = Field(100, ge=0)
    rollout_steps: int = Field(2048, ge=1)
    epochs: int = Field(10, ge=1)
    minibatch: int = Field(64, ge=1)
    lr: float = Field(3e-4, gt=0)
    clip: float = Field(0.2, gt=0, lt=1)
    vf_coef: float = Field(0.5, ge=0)
    ent_coef: float = Field(0.01, ge=0)
    gamma: float = Field(0.99, gt=0, le=1)
    lam: float = Field(0.95, ge=0, le=1)
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    max_grad_norm: Optional[float] = 0.5
    obs_scale: Optional[tuple[float, ...]] = None
    normalize_advantages: bool = True


class ReinforceSection(_Section):
    iterations: int = Field(100, ge=0)
    episodes_per_batch: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0)
    gamma: float = Field(0.99, gt=0, le=1)
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    obs_scale: Optional[tuple[float, ...]] = None


class PidSection(_Section):
    episodes: int = Field(10, ge=0)


class TrainConfig(_Section):
    algorithm: Literal["tabular-q", "reinforce", "ppo", "dpg", "pid"]
    env: Literal["seafloor", "pipe", "grid"]
    seed: int
    out_dir: str = "runs/run"
    eval_every: int = Field(5, ge=1)  # episodes (dpg, reinforce batches, tabular) or iterations (ppo)
    eval_episodes: int = Field(1, ge=1)  # per evaluation point
    final_eval_episodes: int = Field(10, ge=0)
    vehicle: VehicleSection = VehicleSection()
    terrain: TerrainSection = TerrainSection()
    seafloor: SeafloorSection = SeafloorSection()
    pipe: PipeSection = PipeSection()
    grid: GridSection = GridSection()
    tabular: TabularSection = TabularSection()
    dpg: DpgSection = DpgSection()
    ppo: PpoSection = PpoSection()
    reinforce: ReinforceSection = ReinforceSection()
    pid: PidSection = PidSection()

    @model_validator(mode="after")
    def _pairing(self):
        grid_algos = {"tabular-q"}
        if (self.env == "grid") != (self.algorithm in grid_algos):
            raise ValueError(f"algorithm {self.algorithm!r} cannot run on env {self.env!r}")
        return self


def _format_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def parse_config(data: dict) -> TrainConfig:
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_error(e)) from None


def load_config(path, seed_override: int | None = None) -> TrainConfig:
    try:
        with open(path, "rb") as f:
            data = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed TOML in {path}: {e}") from None
    if seed_override is not None:
        data["seed"] = seed_override
    return parse_config(data)


def dumps_config(cfg: TrainConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(mode="json", exclude_none=True))


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_config(cfg))


# -- builders ------------------------------------------------------------------


def vehicle_params(cfg: TrainConfig) -> VehicleParams:
    return VehicleParams(**cfg.vehicle.model_dump())


def build_terrain(cfg: TrainConfig) -> environments.TerrainProfile:
    t = cfg.terrain.model_dump(exclude_none=True)
    kind, seed = t.pop("kind"), t.pop("seed")
    try:
        return environments.terrain_generate(kind, t, seed)
    except ConfigError as e:
        raise ConfigError(f"terrain: {e}") from None


def seafloor_config(cfg: TrainConfig) -> environments.SeafloorConfig:
    s = cfg.seafloor.model_dump()
    weights = environments.SeafloorRewardWeights(s.pop("rho1"), s.pop("rho2"), s.pop("rho3"), s.pop("R"))
    return environments.SeafloorConfig(**s, weights=weights, params=vehicle_params(cfg))


def pipe_config(cfg: TrainConfig) -> environments.PipeConfig:
    p = cfg.pipe.model_dump()
    geom = environments.PipeGeometry(p.pop("anchor"), p.pop("direction"), p.pop("W"), p.pop("H"))
    return environments.PipeConfig(geometry=geom, **p, params=vehicle_params(cfg))


def build_env(cfg: TrainConfig, seed: int = 0):
    if cfg.env == "seafloor":
        return environments.SeafloorEnv(build_terrain(cfg), seafloor_config(cfg), seed)
    if cfg.env == "pipe":
        return environments.PipeEnv(pipe_config(cfg), seed)
    return build_grid(cfg)


def build_grid(cfg: TrainConfig) -> environments.GridWorld:
    g = cfg.grid.model_dump()
    g["obstacles"] = frozenset(tuple(o) for o in g["obstacles"])
    return environments.GridWorld(**g)


def dpg_config(cfg: TrainConfig) -> dpg.DpgConfig:
    d = cfg.dpg.model_dump()
    d.pop("pid_prefill")
    return dpg.DpgConfig(**d)


def ppo_config(cfg: TrainConfig) -> pg.PpoConfig:
    return pg.PpoConfig(**cfg.ppo.model_dump())


def reinforce_config(cfg: TrainConfig) -> pg.ReinforceConfig:
    return pg.ReinforceConfig(**cfg.reinforce.model_dump())


def pid_for(env):
    return baselines.pid_policy_for(env)
