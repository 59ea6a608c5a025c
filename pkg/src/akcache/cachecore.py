"""Exact-match cache with LRU / ideal replacement and auto-refresh.

Keys are approximate keys (see :mod:`akcache.approxfn`); lookups are a single
dict access. With error control enabled, each entry carries a back-off state
that decides when a cached label must be re-verified by the classifier.
"""

from __future__ import annotations

import json
import math
from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Callable, Hashable, Mapping, NamedTuple

from .approxfn import IDENTITY, ApproxFn, key_to_bytes
from .errors import CacheInvariantError, ConfigurationError

LRU = "lru"
IDEAL = "ideal"
ALGORITHM1 = "algorithm1"
PHI_SEQUENCE = "phi_sequence"
NO_CONTROL = "none"
AUTO_REFRESH = "auto_refresh"

MISS_INSERTED = "miss_inserted"
MISS_BYPASSED = "miss_bypassed"
HIT_SERVED = "hit_served"
HIT_VERIFIED_MATCH = "hit_verified_match"
HIT_VERIFIED_MISMATCH = "hit_verified_mismatch"

INFERENCE_KINDS = frozenset({MISS_INSERTED, MISS_BYPASSED, HIT_VERIFIED_MATCH, HIT_VERIFIED_MISMATCH})
HIT_KINDS = frozenset({HIT_SERVED, HIT_VERIFIED_MATCH, HIT_VERIFIED_MISMATCH})

TO_SERVE_CAP = 2**62


class LookupOutcome(NamedTuple):
    label: int
    kind: str
    inference_invoked: bool


@dataclass(frozen=True)
class CacheConfig:
    capacity: int
    replacement: str = LRU
    approx: ApproxFn = IDENTITY
    error_control: str = AUTO_REFRESH
    beta: float = 2.0
    schedule_mode: str = ALGORITHM1

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ConfigurationError(f"capacity must be a positive integer, got {self.capacity!r}")
        if self.replacement not in (LRU, IDEAL):
            raise ConfigurationError(f"unknown replacement policy {self.replacement!r}")
        if self.error_control not in (NO_CONTROL, AUTO_REFRESH):
            raise ConfigurationError(f"unknown error control {self.error_control!r}")
        if self.schedule_mode not in (ALGORITHM1, PHI_SEQUENCE):
            raise ConfigurationError(f"unknown schedule mode {self.schedule_mode!r}")
        if self.error_control == AUTO_REFRESH and not self.beta > 1:
            raise ConfigurationError(f"back-off base must exceed 1, got {self.beta!r}")

    @property
    def auto_refresh(self) -> bool:
        return self.error_control == AUTO_REFRESH


def phi(n: int, beta: float) -> int:
    """Arrival index of the n-th inference of an undisturbed sequence (n >= 1)."""
    try:
        return max(n, math.floor(beta ** (n - 1)))
    except OverflowError:
        return TO_SERVE_CAP


def verification_indices(beta: float, mode: str, count: int) -> list[int]:
    """Arrival indices (1 = insertion) at which an always-matching entry is verified."""
    if not beta > 1:
        raise ConfigurationError(f"back-off base must exceed 1, got {beta!r}")
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    if mode == PHI_SEQUENCE:
        return [phi(n, beta) for n in range(1, count + 1)]
    if mode != ALGORITHM1:
        raise ConfigurationError(f"unknown schedule mode {mode!r}")
    schedule = BackoffSchedule(beta, mode)
    out = [1]
    refreshed = 1
    pos = 1 + schedule.initial_to_serve + 1
    while len(out) < count:
        out.append(pos)
        pos += schedule.after_match(refreshed) + 1
        refreshed += 1
    return out


class BackoffSchedule:
    """Maps an entry's ``refreshed`` counter to the number of hits served unverified.

    ``algorithm1`` sets ``to_serve = floor(beta ** refreshed)`` after a match.
    ``phi_sequence`` picks ``to_serve`` so that verifications land exactly on
    arrivals ``phi(1), phi(2), ...`` of the sequence.
    """

    def __init__(self, beta: float, mode: str = ALGORITHM1):
        if not beta > 1:
            raise ConfigurationError(f"back-off base must exceed 1, got {beta!r}")
        if mode not in (ALGORITHM1, PHI_SEQUENCE):
            raise ConfigurationError(f"unknown schedule mode {mode!r}")
        self.beta = beta
        self.mode = mode
        table = []
        r = 0
        while True:
            v = self._compute(r)
            table.append(v)
            if v >= TO_SERVE_CAP or r > 100_000:
                break
            r += 1
        self._table = table
        self.initial_to_serve = self._compute_initial()

    def _compute_initial(self) -> int:
        if self.mode == ALGORITHM1:
            return 0
        return max(0, phi(2, self.beta) - 2)

    def _compute(self, refreshed: int) -> int:
        if self.mode == ALGORITHM1:
            try:
                v = math.floor(self.beta ** refreshed)
            except OverflowError:
                return TO_SERVE_CAP
        else:
            # the match just observed was inference number refreshed + 1
            n = refreshed + 1
            v = phi(n + 1, self.beta) - phi(n, self.beta) - 1
        return min(max(v, 0), TO_SERVE_CAP)

    def after_match(self, refreshed: int) -> int:
        table = self._table
        if refreshed < len(table):
            return table[refreshed]
        return TO_SERVE_CAP

    def table(self) -> list[int]:
        return list(self._table)


def ideal_admit(cache, key: Hashable, popularity_rank: int | None) -> bool:
    """True iff ``key`` is among the K most popular keys (rank is 1-based).

    ``cache`` is an :class:`ApproxKeyCache` or just its capacity K.
    """
    capacity = cache if isinstance(cache, int) else cache.capacity
    if popularity_rank is None:
        raise ConfigurationError(f"no popularity rank for key {key!r}")
    return popularity_rank <= capacity


class ApproxKeyCache:
    """Approximate-key cache driven one lookup at a time.

    ``classify`` is any callable ``classify(x) -> label``; it is only invoked on
    misses and on scheduled verifications.

    Entries are stored as ``[label, to_serve, refreshed, length]`` where
    ``length`` counts the arrivals of the current sequence.
    """

    def __init__(self, config: CacheConfig, popularity_rank: Mapping | Callable | None = None,
                 track_sequences: bool = False):
        self.config = config
        self.capacity = config.capacity
        self.approx = config.approx
        if config.replacement == IDEAL and popularity_rank is None:
            raise ConfigurationError("ideal replacement needs a popularity oracle")
        self.popularity_rank = popularity_rank
        self._ideal = config.replacement == IDEAL
        self._entries: OrderedDict = OrderedDict()
        self._control = config.auto_refresh
        if self._control:
            self.schedule = BackoffSchedule(config.beta, config.schedule_mode)
            self._init_serve = self.schedule.initial_to_serve
            self._after = self.schedule._table
        else:
            self.schedule = None
            self._init_serve = 0
            self._after = []
        self.track_sequences = track_sequences
        self.sequence_lengths: Counter = Counter()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return key in self._entries

    def keys(self):
        """Cached keys, least recently used first."""
        return list(self._entries)

    def state(self, key):
        """(label, to_serve, refreshed) of a cached key, or None."""
        e = self._entries.get(key)
        return None if e is None else (e[0], e[1], e[2])

    def lookup(self, x, classify: Callable) -> LookupOutcome:
        """Approximate ``x`` and run one step of the auto-refresh algorithm."""
        return self.lookup_key(self.approx(x), x, classify)

    def lookup_key(self, key, x, classify: Callable) -> LookupOutcome:
        """Same as :meth:`lookup` with the approximate key already computed."""
        entries = self._entries
        e = entries.get(key)
        if e is None:
            y = classify(x)
            if self._ideal:
                if not self.ideal_admit(key):
                    return LookupOutcome(y, MISS_BYPASSED, True)
                if len(entries) >= self.capacity:
                    raise CacheInvariantError("ideal cache asked to admit beyond capacity")
            elif len(entries) >= self.capacity:
                self.evict_lru()
            entries[key] = [y, self._init_serve, 1, 1]
            return LookupOutcome(y, MISS_INSERTED, True)

        if not self._ideal:
            entries.move_to_end(key)
        e[3] += 1
        if not self._control:
            return LookupOutcome(e[0], HIT_SERVED, False)
        if e[1] > 0:
            e[1] -= 1
            return LookupOutcome(e[0], HIT_SERVED, False)
        y = classify(x)
        if y == e[0]:
            r = e[2]
            after = self._after
            e[1] = after[r] if r < len(after) else TO_SERVE_CAP
            e[2] = r + 1
            return LookupOutcome(y, HIT_VERIFIED_MATCH, True)
        if self.track_sequences:
            # the mismatching arrival opens the next sequence
            self.sequence_lengths[e[3] - 1] += 1
        e[0] = y
        e[1] = self._init_serve
        e[2] = 1
        e[3] = 1
        return LookupOutcome(y, HIT_VERIFIED_MISMATCH, True)

    def rank_of(self, key) -> int | None:
        oracle = self.popularity_rank
        if callable(oracle):
            return oracle(key)
        return oracle.get(key)

    def ideal_admit(self, key, rank: int | None = None) -> bool:
        if rank is None:
            rank = self.rank_of(key)
        return ideal_admit(self.capacity, key, rank)

    def evict_lru(self):
        """Remove and return the least recently looked-up key."""
        if self._ideal:
            raise CacheInvariantError("ideal cache never evicts")
        if len(self._entries) < self.capacity:
            raise CacheInvariantError("eviction requested on a cache that is not full")
        key, e = self._entries.popitem(last=False)
        if self.track_sequences:
            self.sequence_lengths[e[3]] += 1
        return key

    def close_sequences(self):
        """Record the lengths of sequences still open (e.g. at end of a trace)."""
        if self.track_sequences:
            for e in self._entries.values():
                self.sequence_lengths[e[3]] += 1

    def dump_entries(self, fp):
        """Write one JSON object per entry, most recently used first (rank 0)."""
        for rank, (key, e) in enumerate(reversed(self._entries.items())):
            fp.write(json.dumps({
                "key_hex": key_to_bytes(key).hex(),
                "label": e[0],
                "to_serve": e[1],
                "refreshed": e[2],
                "recency_rank": rank,
            }) + "\n")


def lookup_and_maintain(cache: ApproxKeyCache, x, classify: Callable) -> LookupOutcome:
    return cache.lookup(x, classify)


def evict_lru(cache: ApproxKeyCache):
    return cache.evict_lru()
