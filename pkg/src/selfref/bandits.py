"""Bandit agents for the count-reward bandit and the cumulative regret metric."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _argmax_random_tie(values: np.ndarray, rng: np.random.Generator) -> int:
    best = np.flatnonzero(values == values.max())
    return int(best[0]) if len(best) == 1 else int(rng.choice(best))


class RandomAgent:
    name = "random"

    def __init__(self, num_arms: int):
        self.num_arms = num_arms

    def select(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.num_arms))

    def update(self, arm: int, reward: float) -> None:
        pass


class ExpAvgAgent:
    """Epsilon-greedy on per-arm estimates r <- alpha * r + (1 - alpha) * reward."""

    def __init__(self, num_arms: int, alpha: float, epsilon: float = 0.1):
        self.alpha = alpha
        self.epsilon = epsilon
        self.estimates = np.zeros(num_arms)
        self.name = f"exp_avg_{alpha:g}"

    def select(self, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(len(self.estimates)))
        return _argmax_random_tie(self.estimates, rng)

    def update(self, arm: int, reward: float) -> None:
        self.estimates[arm] = self.alpha * self.estimates[arm] + (1.0 - self.alpha) * reward


class CountsRegressionAgent:
    """Epsilon-greedy on r_hat = w * n + b, refit by least squares every round.

    Each observation pairs the arm's pull count before that pull with the
    reward it returned.
    """

    name = "counts_regression"

    def __init__(self, num_arms: int, epsilon: float = 0.1):
        self.epsilon = epsilon
        self.counts = np.zeros(num_arms, dtype=np.int64)
        self._n: list[float] = []
        self._r: list[float] = []
        self.w = 0.0
        self.b = 0.0

    def fit(self) -> tuple[float, float]:
        n = np.asarray(self._n)
        r = np.asarray(self._r)
        if len(n) == 0:
            self.w, self.b = 0.0, 0.0
        elif np.all(n == n[0]):
            self.w, self.b = 0.0, float(r.mean())
        else:
            design = np.stack([n, np.ones_like(n)], axis=1)
            (w, b), *_ = np.linalg.lstsq(design, r, rcond=None)
            self.w, self.b = float(w), float(b)
        return self.w, self.b

    def predict(self) -> np.ndarray:
        return self.w * self.counts + self.b

    def select(self, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(len(self.counts)))
        self.fit()
        return _argmax_random_tie(self.predict(), rng)

    def update(self, arm: int, reward: float) -> None:
        self._n.append(float(self.counts[arm]))
        self._r.append(float(reward))
        self.counts[arm] += 1


def make_bandit_agent(name: str, num_arms: int, epsilon: float = 0.1):
    if name == "random":
        return RandomAgent(num_arms)
    if name == "counts_regression":
        return CountsRegressionAgent(num_arms, epsilon)
    if name.startswith("exp_avg_"):
        return ExpAvgAgent(num_arms, float(name[len("exp_avg_"):]), epsilon)
    raise ValueError(f"unknown bandit agent {name!r}")


STUDY_AGENTS = ("random", "exp_avg_0", "exp_avg_0.1", "exp_avg_0.9", "counts_regression")


def bandit_agent_step(agent, history: Sequence[tuple[int, float]], rng: np.random.Generator) -> int:
    """Replay ``history`` of (arm, reward) into a fresh-state agent, then choose."""
    for arm, reward in history:
        agent.update(arm, reward)
    return agent.select(rng)


def regret_curve(arms: Sequence[int], rewards: Sequence[float], num_arms: int) -> np.ndarray:
    """Cumulative regret after each round.

    The best achievable mean at round t is minus the smallest pull count
    before that round; the realized reward includes the noise.
    """
    counts = np.zeros(num_arms, dtype=np.int64)
    per_round = np.empty(len(arms))
    for t, (arm, reward) in enumerate(zip(arms, rewards)):
        per_round[t] = -counts.min() - reward
        counts[arm] += 1
    return np.cumsum(per_round)


def regret(arms: Sequence[int], rewards: Sequence[float], num_arms: int) -> float:
    curve = regret_curve(arms, rewards, num_arms)
    return float(curve[-1]) if len(curve) else 0.0
