"""Run configuration.

Defaults are the usual DDPG settings plus the Self-Reference sizes; step
budgets are scaled down for a desktop machine.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .envs import TASKS
from .sr import STRATEGIES

INTRINSICS = ("count_grid", "apt_knn", "rnd")
ENVS = ("pointmass", "mab")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    env: str = "pointmass"
    intrinsic: str = "count_grid"
    task: str = "explore"
    query_strategy: str = "learned"
    sr_enabled: bool = True
    k: int = 10
    D: int = 5
    window: int = 100_000
    U: int = 256
    pt_steps: int = 100_000
    ft_steps: int = 20_000
    # DDPG
    hidden: int = 256
    batch_size: int = 512
    lr: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.01
    n_step: int = 3
    stddev: float = 0.2
    stddev_clip: float = 0.3
    seed_frames: int = 4000
    update_every: int = 2
    replay_capacity: int = 1_000_000
    # Self-Reference details
    encoder_hidden: int = 256
    num_heads: int = 4
    metric: str = "cosine"
    identity_coef: float = 1.0
    query_hidden: int = 64
    query_log_std_init: float = 0.0
    ppo_epochs: int = 4
    ppo_minibatches: int = 4
    ppo_lr: float = 3e-4
    ppo_clip: float = 0.2
    gae_lambda: float = 0.95
    zero_reference_inputs: bool = False
    # environment / rewards / logging
    grid: int = 20
    log_every: int = 500
    eval_every: int = 2000
    eval_episodes: int = 10
    kl_sigma: float = 0.2
    kl_states: int = 400
    distill_epochs: int = 200
    distill_lr: float = 1e-3
    distill_sigma: float = 0.1
    distill_batch: int = 256
    record_wall_time: bool = False
    label: str = ""
    out: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.intrinsic not in INTRINSICS:
            raise ConfigError(f"intrinsic must be one of {INTRINSICS}, got {self.intrinsic!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.query_strategy not in STRATEGIES:
            raise ConfigError(f"query_strategy must be one of {STRATEGIES}, got {self.query_strategy!r}")
        if self.metric not in ("cosine", "l2"):
            raise ConfigError(f"metric must be cosine or l2, got {self.metric!r}")
        if self.U % self.num_heads:
            raise ConfigError(f"U={self.U} must be divisible by num_heads={self.num_heads}")
        for name in ("k", "D", "window", "U", "hidden", "batch_size", "n_step", "update_every", "grid",
                     "log_every", "eval_every", "replay_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.pt_steps < 0 or self.ft_steps < 0:
            raise ConfigError("step budgets must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})
