"""Intrinsic reward generators.

Each generator exposes ``reward(states)`` (pure in its current history),
``observe(state)`` called once per environment step, and ``update(states)``
called once per agent update.  Only ``observe``/``update`` change history.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from . import tensor as T
from .nn import MLP, make_rng
from .optim import Adam


def _batch(states) -> tuple[np.ndarray, bool]:
    s = np.asarray(states, dtype=np.float64)
    return (s[None, :], True) if s.ndim == 1 else (s, False)


class CountGridReward:
    """r = 1 / sqrt(n(cell) + 1) over a G x G grid of the chosen state dims."""

    name = "count_grid"

    def __init__(self, grid: int = 20, low: float = -1.0, high: float = 1.0, dims=(0, 1)):
        self.grid = grid
        self.low, self.high = low, high
        self.dims = list(dims)
        self.counts = np.zeros((grid, grid), dtype=np.int64)

    def cells(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = states[:, self.dims]
        idx = np.floor((p - self.low) / (self.high - self.low) * self.grid).astype(np.int64)
        idx = np.clip(idx, 0, self.grid - 1)
        return idx[:, 0], idx[:, 1]

    def reward(self, states):
        s, single = _batch(states)
        i, j = self.cells(s)
        r = 1.0 / np.sqrt(self.counts[i, j] + 1.0)
        return float(r[0]) if single else r

    def observe(self, state) -> None:
        s, _ = _batch(state)
        i, j = self.cells(s)
        np.add.at(self.counts, (i, j), 1)

    def update(self, states) -> None:
        pass


class AptReward:
    """Particle-entropy reward r = log(1 + mean distance to the k nearest particles).

    Particles are the newest ``capacity`` observed states, or the newest
    states of ``source`` (a reference window) when one is given.
    """

    name = "apt_knn"

    def __init__(self, k: int = 12, capacity: int = 4096, source=None):
        self.k = k
        self.capacity = capacity
        self.source = source
        self._fifo: deque = deque(maxlen=capacity)

    def particles(self) -> np.ndarray:
        if self.source is not None:
            return self.source.states[-self.capacity :]
        return np.asarray(self._fifo) if self._fifo else np.zeros((0, 0))

    def reward(self, states):
        s, single = _batch(states)
        parts = self.particles()
        if len(parts) == 0:
            r = np.zeros(len(s))
        else:
            k = min(self.k, len(parts))
            r = np.empty(len(s))
            for lo in range(0, len(s), 128):
                diff = s[lo : lo + 128, None, :] - parts[None, :, :]
                d2 = np.einsum("bpd,bpd->bp", diff, diff)
                d = np.sqrt(np.partition(d2, k - 1, axis=1)[:, :k])
                r[lo : lo + 128] = np.log1p(d.mean(axis=1))
        return float(r[0]) if single else r

    def observe(self, state) -> None:
        if self.source is None:
            s, _ = _batch(state)
            self._fifo.extend(np.array(row) for row in s)

    def update(self, states) -> None:
        pass


class RndReward:
    """Prediction error of a trained predictor against a frozen random network."""

    name = "rnd"

    def __init__(self, state_dim: int, feature_dim: int = 8, hidden: int = 64, lr: float = 1e-4, seed: int = 0):
        self.target = MLP([state_dim, hidden, feature_dim], make_rng(seed, "rnd.target"))
        for p in self.target.parameters():
            p.requires_grad = False
        self.predictor = MLP([state_dim, hidden, feature_dim], make_rng(seed, "rnd.predictor"))
        self.opt = Adam(dict(self.predictor.named_parameters()), lr=lr)

    def reward(self, states):
        s, single = _batch(states)
        with T.no_grad():
            err = self.predictor(s).data - self.target(s).data
        r = np.sum(err * err, axis=1)
        return float(r[0]) if single else r

    def observe(self, state) -> None:
        pass

    def update(self, states) -> float:
        s, _ = _batch(states)
        with T.no_grad():
            target = self.target(s).data
        diff = self.predictor(s) - target
        loss = T.mean(T.tsum(diff * diff, axis=1))
        self.opt.zero_grad()
        T.backward(loss)
        self.opt.step()
        return float(loss.data)


def make_intrinsic(name: str, state_dim: int, seed: int = 0, window=None, grid: int = 20):
    if name == "count_grid":
        return CountGridReward(grid=grid)
    if name == "apt_knn":
        return AptReward(source=window)
    if name == "rnd":
        return RndReward(state_dim, seed=seed)
    raise ValueError(f"unknown intrinsic reward {name!r}")
