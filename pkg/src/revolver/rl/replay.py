"""Ring replay buffer whose tuples remember the robot that produced them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Batch", "ReplayBuffer", "InsufficientSamples"]


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    beta: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.beta = np.zeros(capacity)
        self.size = 0
        self.head = 0  # next write slot

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, done, beta) -> None:
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        if not np.isfinite(r):
            raise ValueError("reward must be finite")
        i = self.head
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.done[i], self.beta[i] = done, beta
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_many(self, s, a, r, s2, done, beta) -> None:
        r, beta = np.asarray(r, dtype=float), np.asarray(beta, dtype=float)
        if np.any((beta < 0.0) | (beta > 1.0)):
            raise ValueError("beta must lie in [0, 1]")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward must be finite")
        n = len(r)
        if n > self.capacity:
            s, a, r, s2, done, beta = (x[n - self.capacity :] for x in (s, a, r, s2, np.asarray(done), beta))
            n = self.capacity
        idx = (self.head + np.arange(n)) % self.capacity
        self.s[idx], self.a[idx], self.r[idx], self.s2[idx] = s, a, r, s2
        self.done[idx], self.beta[idx] = done, beta
        self.head = (self.head + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def _chronological(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.head + np.arange(self.capacity)) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform without replacement within one call."""
        if batch_size > self.size:
            raise InsufficientSamples(f"insufficient samples: requested {batch_size}, buffer holds {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self._gather(idx)

    def _gather(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], self.beta[idx])

    def all(self) -> Batch:
        return self._gather(self._chronological())

    def clean(self, lo: float, hi: float) -> int:
        """Drop tuples whose beta is outside [lo, hi]; returns the number removed."""
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"need 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
        order = self._chronological()
        keep = order[(self.beta[order] >= lo) & (self.beta[order] <= hi)]
        removed = self.size - len(keep)
        if removed == 0:
            return 0
        for arr in (self.s, self.a, self.r, self.s2, self.done, self.beta):
            arr[: len(keep)] = arr[keep]
        self.size = len(keep)
        self.head = self.size % self.capacity
        return removed
