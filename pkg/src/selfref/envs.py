"""Desk-scale environments: the count-reward bandit and a point-mass maze."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class CountMab:
    """K-armed bandit whose arm reward is minus its prior pull count plus noise."""

    def __init__(self, num_arms: int = 10, noise_std: float = 10.0, seed: int = 0):
        self.num_arms = num_arms
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)
        self.counts = np.zeros(num_arms, dtype=np.int64)

    @property
    def total_pulls(self) -> int:
        return int(self.counts.sum())

    def pull(self, arm: int) -> float:
        if not 0 <= arm < self.num_arms:
            raise IndexError(f"arm {arm} outside [0, {self.num_arms})")
        noise = self.noise_std * self.rng.standard_normal() if self.noise_std > 0 else 0.0
        reward = -float(self.counts[arm]) + noise
        self.counts[arm] += 1
        return reward


def mab_pull(env: CountMab, arm: int) -> float:
    return env.pull(arm)


@dataclass(frozen=True)
class MazeConstants:
    half_length: float = 0.6
    thickness: float = 0.05
    episode_length: int = 400
    damping: float = 0.95
    force_scale: float = 0.1
    goal_radius: float = 0.15
    start: tuple[float, float] = (-0.7, 0.7)
    start_jitter: float = 0.05

    def as_dict(self) -> dict:
        return asdict(self)


GOALS = {
    "reach_tl": (-0.7, 0.7),
    "reach_tr": (0.7, 0.7),
    "reach_bl": (-0.7, -0.7),
    "reach_br": (0.7, -0.7),
}
TASKS = ("explore",) + tuple(GOALS)


class PointMassMaze:
    """A ball in [-1, 1]^2 with an impenetrable cross-shaped wall at the origin.

    Observation is (x, y, vx, vy); action is a force in [-1, 1]^2.  Motion is
    resolved one axis at a time; hitting the box edge or a wall face stops
    the ball on the surface and zeroes that velocity component.
    """

    state_dim = 4
    action_dim = 2

    def __init__(self, task: str = "explore", seed: int = 0, constants: MazeConstants = MazeConstants()):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
        self.task = task
        self.c = constants
        self.goal = np.array(GOALS[task]) if task in GOALS else None
        self.rng = np.random.default_rng(seed)
        half, thick = constants.half_length, constants.thickness / 2
        # (xlo, xhi, ylo, yhi)
        self.walls = ((-half, half, -thick, thick), (-thick, thick, -half, half))
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0

    @property
    def horizon(self) -> int:
        return self.c.episode_length

    def observation(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def reset(self) -> np.ndarray:
        jitter = self.rng.uniform(-self.c.start_jitter, self.c.start_jitter, size=2)
        self.pos = np.asarray(self.c.start, dtype=np.float64) + jitter
        self.vel = np.zeros(2)
        self.t = 0
        return self.observation()

    def inside_wall(self, pos) -> bool:
        x, y = pos
        return any(xl < x < xh and yl < y < yh for xl, xh, yl, yh in self.walls)

    def _move_axis(self, axis: int) -> None:
        other = 1 - axis
        start = self.pos[axis]
        end = start + self.vel[axis]
        if end > 1.0 or end < -1.0:
            end = float(np.clip(end, -1.0, 1.0))
            self.vel[axis] = 0.0
        across = self.pos[other]
        for wall in self.walls:
            lo, hi = wall[2 * axis], wall[2 * axis + 1]
            olo, ohi = wall[2 * other], wall[2 * other + 1]
            if not olo < across < ohi:
                continue
            if start <= lo < end:
                end = lo
                self.vel[axis] = 0.0
            elif start >= hi > end:
                end = hi
                self.vel[axis] = 0.0
        self.pos[axis] = end

    def dynamics(self, pos, vel, action) -> tuple[np.ndarray, np.ndarray]:
        """Pure one-step transition; does not touch the episode clock."""
        saved = self.pos, self.vel
        self.pos = np.array(pos, dtype=np.float64)
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        self.vel = self.c.damping * np.asarray(vel, dtype=np.float64) + self.c.force_scale * a
        self._move_axis(0)
        self._move_axis(1)
        out = self.pos, self.vel
        self.pos, self.vel = saved
        return out

    def task_reward(self, pos) -> float:
        if self.goal is None:
            return 0.0
        dist = float(np.linalg.norm(np.asarray(pos) - self.goal))
        return max(0.0, 1.0 - dist / self.c.goal_radius)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        self.pos, self.vel = self.dynamics(self.pos, self.vel, action)
        self.t += 1
        return self.observation(), self.task_reward(self.pos), self.t >= self.c.episode_length


def make_env(name: str, task: str = "explore", seed: int = 0):
    if name == "pointmass":
        return PointMassMaze(task=task, seed=seed)
    if name == "mab":
        return CountMab(seed=seed)
    raise ValueError(f"unknown env {name!r}")
