"""Multi-timescale replay: cascaded FIFO sub-buffers plus an overflow store."""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import Any

import numpy as np

OVERFLOW_TAG = -1


@dataclass
class Experience:
    obs_S: np.ndarray
    action_a: np.ndarray
    reward_r: float
    cost_c: float
    next_obs_S: np.ndarray
    budget_M: int = 0
    born_step: int = 0


@dataclass(frozen=True)
class MtrConfig:
    n_sub: int = 4
    sub_capacity: int = 1250
    promote_prob: float = 0.8
    total_cap: int = 5000

    def __post_init__(self):
        if self.n_sub < 1 or self.sub_capacity < 1 or self.total_cap < 1:
            raise ValueError("n_sub, sub_capacity and total_cap must be positive")
        if not 0.0 <= self.promote_prob <= 1.0:
            raise ValueError("promote_prob must be a probability")
        if self.n_sub * self.sub_capacity > self.total_cap:
            raise ValueError("sub-buffer capacities exceed total_cap")

    @classmethod
    def equal_split(cls, n_sub: int, total_cap: int, promote_prob: float) -> "MtrConfig":
        return cls(n_sub, total_cap // n_sub, promote_prob, total_cap)


class _Store:
    """Shared sampling over a list of deques, with provenance tags."""

    def _parts(self) -> list[tuple[int, deque]]:
        raise NotImplementedError

    def __len__(self) -> int:
        return sum(len(d) for _, d in self._parts())

    def items(self) -> list[tuple[int, Any]]:
        return [(tag, x) for tag, d in self._parts() for x in d]

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        """Uniform draws with replacement; returns ``(items, tags)``."""
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        parts = self._parts()
        sizes = np.array([len(d) for _, d in parts])
        total = int(sizes.sum())
        if total == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, total, batch_size)
        bounds = np.cumsum(sizes)
        which = np.searchsorted(bounds, idx, side="right")
        starts = bounds - sizes
        items, tags = [], np.empty(batch_size, dtype=np.int64)
        for j, (w, i) in enumerate(zip(which, idx)):
            tag, d = parts[w]
            items.append(d[i - starts[w]])
            tags[j] = tag
        return items, tags

    def age_histogram(self, now_step: int) -> Counter:
        return Counter(now_step - x.born_step for _, x in self.items())


class MtrBuffer(_Store):
    def __init__(self, cfg: MtrConfig):
        self.cfg = cfg
        self.subs = [deque() for _ in range(cfg.n_sub)]
        self.overflow: deque = deque()
        self.entered = np.zeros(cfg.n_sub, dtype=np.int64)
        self.evicted = np.zeros(cfg.n_sub, dtype=np.int64)

    def _parts(self):
        return [(i, d) for i, d in enumerate(self.subs)] + [(OVERFLOW_TAG, self.overflow)]

    def push(self, exp, rng: np.random.Generator) -> None:
        cfg = self.cfg
        item = exp
        for k in range(cfg.n_sub):
            self.subs[k].append(item)
            self.entered[k] += 1
            if len(self.subs[k]) <= cfg.sub_capacity:
                item = None
                break
            item = self.subs[k].popleft()
            self.evicted[k] += 1
            last = k == cfg.n_sub - 1
            if last or rng.random() >= cfg.promote_prob:
                self.overflow.append(item)
                item = None
                break
        while len(self) > cfg.total_cap and self.overflow:
            self.overflow.popleft()

    def retention_ratios(self) -> np.ndarray:
        """Fraction of items evicted from sub-buffer k that entered k+1."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.entered[1:] / self.evicted[:-1]

    def contents(self) -> dict:
        return {"subs": [list(d) for d in self.subs], "overflow": list(self.overflow)}


class FifoBuffer(_Store):
    """Single ring buffer; every item is tagged 0."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.data: deque = deque(maxlen=capacity)

    def _parts(self):
        return [(0, self.data)]

    def push(self, exp, rng: np.random.Generator | None = None) -> None:
        self.data.append(exp)
