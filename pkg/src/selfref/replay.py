"""Replay buffer with n-step returns truncated at episode ends.

Each transition may carry the retrieval context (k*D retrieved states) that
was used when acting on its observation, so updates can re-aggregate it with
current encoder weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    discount: np.ndarray
    next_obs: np.ndarray
    retrieved: np.ndarray | None = None
    mask: np.ndarray | None = None
    next_retrieved: np.ndarray | None = None
    next_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.obs)


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, episode_length: int,
                 n_step: int = 3, gamma: float = 0.99, slots: int = 0):
        self.capacity = int(capacity)
        self.episode_length = episode_length
        self.n_step = n_step
        self.gamma = gamma
        self.slots = slots
        self.obs = np.zeros((capacity, state_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, state_dim))
        self.step = np.zeros(capacity, dtype=np.int64)
        if slots:
            self.retrieved = np.zeros((capacity, slots, state_dim))
            self.mask = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, step_in_episode: int, retrieved=None) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.step[i] = step_in_episode
        if self.slots:
            if retrieved is None:
                self.retrieved[i] = 0.0
                self.mask[i] = 0.0
            else:
                self.retrieved[i] = retrieved
                self.mask[i] = 1.0
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def valid_obs(self) -> np.ndarray:
        return self.obs[: self.size] if self.size < self.capacity else self.obs

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=batch_size)

    def lookahead(self, idx: np.ndarray) -> np.ndarray:
        """Usable n-step length per index: stops at the episode end and the newest entry."""
        newest = (self.ptr - 1) % self.capacity
        available = (newest - idx) % self.capacity + 1
        return np.minimum(np.minimum(self.n_step, self.episode_length - self.step[idx]), available)

    def batch(self, idx: np.ndarray, reward_fn=None) -> Batch:
        """Assemble n-step targets for ``idx``.

        ``reward_fn`` maps next observations to rewards (intrinsic rewards are
        computed at update time); by default the stored rewards are used.
        """
        idx = np.asarray(idx, dtype=np.int64)
        m = self.lookahead(idx)
        j = np.arange(self.n_step)
        cols = (idx[:, None] + j[None, :]) % self.capacity
        valid = j[None, :] < m[:, None]
        if reward_fn is None:
            r = self.reward[cols]
        else:
            r = np.asarray(reward_fn(self.next_obs[cols.reshape(-1)]), dtype=np.float64).reshape(cols.shape)
        reward = np.sum(np.where(valid, r * self.gamma ** j[None, :], 0.0), axis=1)
        last = (idx + m - 1) % self.capacity
        batch = Batch(
            obs=self.obs[idx],
            action=self.action[idx],
            reward=reward,
            discount=self.gamma ** m.astype(np.float64),
            next_obs=self.next_obs[last],
        )
        if self.slots:
            # the context for s_{t+m} is stored with transition t+m when it
            # exists in the same episode; at an episode end reuse t+m-1's
            has_next = (self.step[idx] + m < self.episode_length) & (m < (self.ptr - 1 - idx) % self.capacity + 1)
            nxt = np.where(has_next, (idx + m) % self.capacity, last)
            batch.retrieved = self.retrieved[idx]
            batch.mask = self.mask[idx]
            batch.next_retrieved = self.retrieved[nxt]
            batch.next_mask = self.mask[nxt]
        return batch
