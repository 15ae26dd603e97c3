"""Reference window over completed episodes, exact k-NN search and
neighbour-to-trajectory expansion."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    episode_id: int
    step_in_episode: int


@dataclass
class RetrievalSet:
    """k ordered lists of D consecutive states plus their within-list offsets."""

    neighbor_starts: np.ndarray  # (k,) storage indices returned by the search
    trajectories: np.ndarray  # (k, D, state_dim)
    offsets: np.ndarray  # (k, D)

    @property
    def k(self) -> int:
        return self.trajectories.shape[0]

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]

    def flat_states(self) -> np.ndarray:
        return self.trajectories.reshape(-1, self.trajectories.shape[-1])

    def flat_offsets(self) -> np.ndarray:
        return self.offsets.reshape(-1)


class ReferenceWindow:
    """FIFO store of whole episodes, searchable by state.

    Storage indices are logical: 0 is the oldest surviving transition.
    Eviction is transition-granular and oldest-first, so the oldest episode
    may survive only partially.
    """

    def __init__(self, capacity: int = 100_000, state_dim: int | None = None,
                 episode_length: int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.episode_length = episode_length
        self.state_dim = state_dim
        self.stats: Counter = Counter()
        self._alloc = 0
        self._start = 0
        self._end = 0
        self._episodes: dict[int, tuple[int, int]] = {}
        self._allocate(state_dim or 0)

    # ------------------------------------------------------------ storage
    def _allocate(self, state_dim: int) -> None:
        self.state_dim = state_dim
        self._alloc = self.capacity + max(self.capacity // 2, self.episode_length or 1)
        self._states = np.zeros((self._alloc, state_dim))
        self._unit = np.zeros((self._alloc, state_dim))
        self._zero = np.zeros(self._alloc, dtype=bool)
        self._eid = np.zeros(self._alloc, dtype=np.int64)
        self._step = np.zeros(self._alloc, dtype=np.int64)
        self._ep_lo = np.zeros(self._alloc, dtype=np.int64)
        self._ep_hi = np.zeros(self._alloc, dtype=np.int64)

    def __len__(self) -> int:
        return self._end - self._start

    @property
    def states(self) -> np.ndarray:
        return self._states[self._start : self._end]

    @property
    def episode_ids(self) -> np.ndarray:
        return self._eid[self._start : self._end]

    @property
    def steps(self) -> np.ndarray:
        return self._step[self._start : self._end]

    def episode_range(self, episode_id: int) -> tuple[int, int]:
        """Logical [lo, hi) of the surviving part of an episode."""
        lo, hi = self._episodes[episode_id]
        return max(lo, self._start) - self._start, hi - self._start

    def episode_index(self) -> dict[int, tuple[int, int]]:
        return {e: self.episode_range(e) for e in self._episodes}

    def append_states(self, states: np.ndarray, episode_id: int, steps: np.ndarray | None = None) -> None:
        """Append one complete episode given as a (n, state_dim) array."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or len(states) == 0:
            raise ContractError(f"episode states must be a non-empty (n, d) array, got {states.shape}")
        n = len(states)
        if self.episode_length is not None and n != self.episode_length:
            raise ContractError(f"partial episode: {n} transitions, episode length is {self.episode_length}")
        if episode_id in self._episodes:
            raise ContractError(f"episode {episode_id} already in the window")
        if not self.state_dim:
            self._allocate(states.shape[1])
        elif states.shape[1] != self.state_dim:
            raise ContractError(f"state dim {states.shape[1]} != window state dim {self.state_dim}")
        steps = np.arange(n) if steps is None else np.asarray(steps, dtype=np.int64)
        if n > self.capacity:
            states, steps = states[-self.capacity :], steps[-self.capacity :]
            n = self.capacity
        overflow = len(self) + n - self.capacity
        if overflow > 0:
            self._evict(overflow)
        if self._end + n > self._alloc:
            self._compact()
        lo, hi = self._end, self._end + n
        self._states[lo:hi] = states
        norms = np.linalg.norm(states, axis=1)
        zero = norms == 0
        self._zero[lo:hi] = zero
        self._unit[lo:hi] = states / np.where(zero, 1.0, norms)[:, None]
        self._eid[lo:hi] = episode_id
        self._step[lo:hi] = steps
        self._ep_lo[lo:hi] = lo
        self._ep_hi[lo:hi] = hi
        self._episodes[episode_id] = (lo, hi)
        self._end = hi

    def append_episode(self, episode: Sequence[Transition]) -> None:
        if not episode:
            raise ContractError("cannot append an empty episode")
        ids = {t.episode_id for t in episode}
        if len(ids) != 1:
            raise ContractError(f"episode mixes episode ids {sorted(ids)}")
        steps = np.array([t.step_in_episode for t in episode])
        if not np.array_equal(steps, np.arange(len(episode))):
            raise ContractError("episode steps must run 0..n-1 without gaps")
        self.append_states(np.stack([t.state for t in episode]), ids.pop(), steps)

    def _evict(self, count: int) -> None:
        self._start += count
        for eid in list(self._episodes):
            lo, hi = self._episodes[eid]
            if hi <= self._start:
                del self._episodes[eid]
            else:
                break

    def _compact(self) -> None:
        shift = self._start
        n = len(self)
        for arr in (self._states, self._unit, self._zero, self._eid, self._step, self._ep_lo, self._ep_hi):
            arr[:n] = arr[shift : shift + n]
        self._ep_lo[:n] -= shift
        self._ep_hi[:n] -= shift
        self._episodes = {e: (lo - shift, hi - shift) for e, (lo, hi) in self._episodes.items()}
        self._start, self._end = 0, n

    # ------------------------------------------------------------ persistence
    def to_arrays(self, prefix: str = "window/") -> dict[str, np.ndarray]:
        return {
            prefix + "states": self.states.copy(),
            prefix + "episode_ids": self.episode_ids.astype(np.float64),
            prefix + "steps": self.steps.astype(np.float64),
            prefix + "meta": np.array([self.capacity, self.episode_length or 0], dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "window/") -> "ReferenceWindow":
        capacity, ep_len = (int(x) for x in arrays[prefix + "meta"])
        states = arrays[prefix + "states"]
        win = cls(capacity, state_dim=states.shape[1] or None, episode_length=ep_len or None)
        if len(states) == 0:
            return win
        eids = arrays[prefix + "episode_ids"].astype(np.int64)
        steps = arrays[prefix + "steps"].astype(np.int64)
        keep_len = win.episode_length
        win.episode_length = None  # the oldest episode may be partial
        cuts = np.flatnonzero(np.diff(eids)) + 1
        for chunk, s in zip(np.split(np.arange(len(eids)), cuts), np.split(steps, cuts)):
            win.append_states(states[chunk], int(eids[chunk[0]]), s)
        win.episode_length = keep_len
        return win

    def snapshot(self) -> "ReferenceWindow":
        return ReferenceWindow.from_arrays(self.to_arrays())


def cosine_similarities(window: ReferenceWindow, query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    n = len(window)
    if qn == 0:
        return np.full(n, -1.0)
    sims = window._unit[window._start : window._end] @ (q / qn)
    sims[window._zero[window._start : window._end]] = -1.0
    return sims


TIE_TOL = 1e-12


def _top_k(scores: np.ndarray, k: int, tol: float = TIE_TOL) -> np.ndarray:
    """Indices of the k largest scores, descending.

    Scores within a relative ``tol`` of their sorted neighbour count as tied
    (equal cosines of different vectors rarely round identically), and ties
    go to the lower index.
    """
    n = len(scores)
    if k >= n:
        cand = np.arange(n)
    else:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth - tol * (1.0 + abs(kth)))
    order = cand[np.lexsort((cand, -scores[cand]))]
    s = scores[order]
    gaps = (s[:-1] - s[1:]) > tol * (1.0 + np.abs(s[1:]))
    groups = np.concatenate([[0], np.cumsum(gaps)])
    return order[np.lexsort((order, groups))][:k]


def knn_search(window: ReferenceWindow, query: np.ndarray, k: int, metric: str = "cosine") -> np.ndarray:
    """Exact brute-force nearest neighbours of ``query`` in the window."""
    n = len(window)
    if n == 0:
        raise ContractError("knn_search on an empty window")
    if k <= 0:
        raise ContractError(f"k must be positive, got {k}")
    if k > n:
        window.stats["knn_clamped"] += 1
        k = n
    if metric == "cosine":
        scores = cosine_similarities(window, query)
    elif metric == "l2":
        diff = window.states - np.asarray(query, dtype=np.float64)
        scores = -np.einsum("ij,ij->i", diff, diff)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return _top_k(scores, k)


def sample_indices(window: ReferenceWindow, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(window) == 0:
        raise ContractError("cannot sample from an empty window")
    return rng.integers(0, len(window), size=k)


def expand_trajectories(window: ReferenceWindow, indices: np.ndarray, horizon: int) -> RetrievalSet:
    """Turn neighbour indices into k lists of ``horizon`` consecutive states.

    A neighbour too close to its episode's end yields that episode's last
    ``horizon`` states.  An episode (or surviving remnant) shorter than
    ``horizon`` is left-padded with its first state.
    """
    idx = np.asarray(indices, dtype=np.int64)
    n = len(window)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"neighbour index out of range [0, {n})")
    phys = idx + window._start
    lo = np.maximum(window._ep_lo[phys], window._start)
    hi = window._ep_hi[phys]
    start = np.minimum(phys, hi - horizon)
    rows = start[:, None] + np.arange(horizon)[None, :]
    short = start < lo
    if short.any():
        window.stats["short_episode"] += int(short.sum())
        for r in np.flatnonzero(short):
            length = hi[r] - lo[r]
            pad = horizon - length
            rows[r] = np.concatenate([np.full(pad, lo[r]), np.arange(lo[r], hi[r])])
    trajectories = window._states[rows]
    offsets = np.broadcast_to(np.arange(horizon), (len(idx), horizon)).copy()
    return RetrievalSet(idx, trajectories, offsets)
