"""Similarity-caching baseline: kNN lookup with majority voting.

Keys are the original input vectors, zero-padded to a fixed dimension.
A lookup is a hit when the nearest cached vector lies within ``epsilon``;
the answer is then the majority label among the nearest neighbours.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from sklearn.neighbors import BallTree

from .cachecore import HIT_SERVED, MISS_INSERTED, LookupOutcome
from .errors import ConfigurationError

LINEAR_SCAN = "linear_scan"
PARTITION_TREE = "partition_tree"


@dataclass(frozen=True)
class SimilarityConfig:
    capacity: int
    k_neighbors: int = 10
    epsilon: float = 0.0
    index: str = LINEAR_SCAN
    dim: int = 100
    rebuild_fraction: float = 0.1
    leaf_size: int = 40

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ConfigurationError(f"capacity must be a positive integer, got {self.capacity!r}")
        if self.k_neighbors < 1 or self.k_neighbors > self.capacity:
            raise ConfigurationError("k_neighbors must be in [1, capacity]")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.index not in (LINEAR_SCAN, PARTITION_TREE):
            raise ConfigurationError(f"unknown index {self.index!r}")
        if self.dim < 1:
            raise ConfigurationError("dim must be positive")


class SimEntry(NamedTuple):
    key: tuple
    label: int
    recency: int
    slot: int


class SimilarityCache:
    """LRU-managed similarity cache over fixed-dimension integer vectors."""

    def __init__(self, config: SimilarityConfig):
        self.config = config
        K, d = config.capacity, config.dim
        self._vecs = np.zeros((K, d), dtype=float)
        self._labels = np.zeros(K, dtype=np.int64)
        self._recency = np.zeros(K, dtype=np.int64)
        self._version = np.zeros(K, dtype=np.int64)
        self._norm2 = np.zeros(K, dtype=float)
        self._used = np.zeros(K, dtype=bool)
        self._lru: OrderedDict = OrderedDict()  # slot -> None, least recent first
        self._free = list(range(K - 1, -1, -1))
        self._clock = 0
        # partition tree snapshot
        self._tree = None
        self._tree_slots = np.empty(0, dtype=np.int64)
        self._tree_versions = np.empty(0, dtype=np.int64)
        self._pending: set = set()
        self._stale = 0
        self._since_build = 0

    def __len__(self):
        return len(self._lru)

    def pad(self, x: Sequence[int]) -> np.ndarray:
        d = self.config.dim
        if len(x) > d:
            raise ConfigurationError(f"input of length {len(x)} exceeds dimension {d}")
        v = np.zeros(d, dtype=float)
        v[:len(x)] = x
        return v

    def entries(self) -> list[SimEntry]:
        return [self._entry(s) for s in self._lru]

    def _entry(self, slot: int) -> SimEntry:
        v = self._vecs[slot]
        return SimEntry(tuple(int(a) for a in v), int(self._labels[slot]), int(self._recency[slot]), slot)

    def _touch(self, slot: int):
        self._clock += 1
        self._recency[slot] = self._clock
        self._lru.move_to_end(slot)

    def insert(self, x: Sequence[int], label: int) -> int:
        """Store ``(x, label)``, evicting the least recently used entry when full."""
        v = self.pad(x)
        if self._free:
            slot = self._free.pop()
        else:
            slot, _ = self._lru.popitem(last=False)
            if slot in self._pending:
                self._pending.discard(slot)
            elif self._tree is not None:
                self._stale += 1
        self._vecs[slot] = v
        self._norm2[slot] = v @ v
        self._labels[slot] = label
        self._version[slot] += 1
        self._used[slot] = True
        self._lru[slot] = None
        self._touch(slot)
        if self.config.index == PARTITION_TREE:
            self._pending.add(slot)
            self._since_build += 1
            if self._tree is None or self._since_build > self.config.rebuild_fraction * self.config.capacity:
                self._rebuild()
        return slot

    def _rebuild(self):
        slots = np.fromiter(self._lru, dtype=np.int64, count=len(self._lru))
        self._tree = BallTree(self._vecs[slots], leaf_size=self.config.leaf_size)
        self._tree_slots = slots
        self._tree_versions = self._version[slots].copy()
        self._pending.clear()
        self._stale = 0
        self._since_build = 0

    def _linear(self, q: np.ndarray, k: int, slots: np.ndarray | None = None):
        if slots is None:
            # every slot is occupied; avoid copying the matrix
            slots = np.arange(self.config.capacity)
            d2 = self._norm2 - 2.0 * (self._vecs @ q) + q @ q
        else:
            if slots.size == 0:
                return slots, np.empty(0)
            d2 = self._norm2[slots] - 2.0 * (self._vecs[slots] @ q) + q @ q
        # integer coordinates keep every term exact in float64
        dist = np.sqrt(np.maximum(d2, 0.0))
        if k < slots.size:
            part = np.argpartition(dist, k - 1)[:k]
            # keep every candidate tied with the k-th distance so tie-breaking is by slot
            kth = dist[part].max()
            part = np.flatnonzero(dist <= kth)
            slots, dist = slots[part], dist[part]
        order = np.lexsort((slots, dist))[:k]
        return slots[order], dist[order]

    def _tree_query(self, q: np.ndarray, k: int):
        n_tree = self._tree_slots.size
        kq = min(k + self._stale, n_tree)
        cand_s, cand_d = [], []
        if kq > 0:
            dist, ind = self._tree.query(q[None, :], k=kq)
            s = self._tree_slots[ind[0]]
            live = self._version[s] == self._tree_versions[ind[0]]
            cand_s.append(s[live])
            cand_d.append(dist[0][live])
        if self._pending:
            ps = np.fromiter(self._pending, dtype=np.int64, count=len(self._pending))
            s, d = self._linear(q, k, ps)
            cand_s.append(s)
            cand_d.append(d)
        if not cand_s:
            return np.empty(0, dtype=np.int64), np.empty(0)
        s = np.concatenate(cand_s)
        d = np.concatenate(cand_d)
        order = np.lexsort((s, d))[:k]
        return s[order], d[order]

    def _knn_slots(self, q: np.ndarray, k: int):
        if k < 1:
            raise ConfigurationError("k must be at least 1")
        if not self._lru:
            return np.empty(0, dtype=np.int64), np.empty(0)
        if self.config.index == PARTITION_TREE:
            return self._tree_query(q, k)
        if len(self._lru) == self.config.capacity:
            return self._linear(q, k)
        return self._linear(q, k, np.flatnonzero(self._used))

    def knn(self, x: Sequence[int], k: int) -> list[tuple[SimEntry, float]]:
        """The ``k`` cached entries closest to ``x``, nearest first."""
        slots, dist = self._knn_slots(self.pad(x), k)
        return [(self._entry(int(s)), float(d)) for s, d in zip(slots, dist)]

    def _vote(self, slots: np.ndarray, dist: np.ndarray) -> int:
        eps = self.config.epsilon
        if eps > 0:
            keep = dist <= eps
            slots, dist = slots[keep], dist[keep]
        best = None
        for label in np.unique(self._labels[slots]):
            members = self._labels[slots] == label
            # more votes first, then the closest member, then the lowest label
            rank = (-int(members.sum()), float(dist[members].min()), int(label))
            if best is None or rank < best:
                best = rank
        return best[2]

    def lookup(self, x: Sequence[int], classify: Callable) -> LookupOutcome:
        q = self.pad(x)
        slots, dist = self._knn_slots(q, self.config.k_neighbors) if self._lru else (None, None)
        if slots is not None and slots.size and dist[0] <= self.config.epsilon:
            self._touch(int(slots[0]))
            return LookupOutcome(self._vote(slots, dist), HIT_SERVED, False)
        y = classify(x)
        self.insert(x, y)
        return LookupOutcome(y, MISS_INSERTED, True)


def sim_lookup(cache: SimilarityCache, x, classify: Callable) -> LookupOutcome:
    return cache.lookup(x, classify)


def knn(cache: SimilarityCache, x, k: int):
    return cache.knn(x, k)
