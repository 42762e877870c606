"""Streaming top-k selection: bounded queues and the two-level truncated
hierarchy that trades a small, quantified miss probability for much
shorter per-stream queues.

A node scans with several parallel distance streams. Giving every stream a
full-length queue is wasteful: if the overall k best items land uniformly
across q streams, the count falling into any single stream is
Binomial(k, 1/q), so a far shorter per-stream queue almost never evicts a
true result. `truncated_queue_length` picks the shortest length whose
union-bound miss probability stays below 1 - target_prob.

All orderings are lexicographic by (distance, vector_id) so distributed
merges are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, RejectionError

# Accounting constant for the performance model: the hardware queue this
# buffer stands in for consumes one element every two clock cycles.
CYCLES_PER_INSERT = 2


class TopKBuffer:
    """Bounded buffer retaining the `capacity` smallest (distance, id) pairs.

    Semantically equivalent to a hardware systolic priority queue: after any
    insertion sequence the contents are exactly the capacity smallest items
    seen, ties broken by lower vector_id. Batched inserts are deferred and
    compacted lazily, which keeps streaming scans cheap.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("queue capacity must be >= 1")
        self.capacity = capacity
        self.ingested = 0
        self._dists: list[np.ndarray] = []
        self._ids: list[np.ndarray] = []
        self._pending = 0

    def insert(self, distance: float, vector_id: int) -> None:
        self.extend(np.array([distance], dtype=np.float32), np.array([vector_id], dtype=np.uint64))

    def extend(self, distances: np.ndarray, vector_ids: np.ndarray) -> None:
        distances = np.asarray(distances, dtype=np.float32)
        vector_ids = np.asarray(vector_ids, dtype=np.uint64)
        if distances.shape != vector_ids.shape:
            raise ConfigurationError("distances and ids must have equal length")
        if distances.size == 0:
            return
        if not np.isfinite(distances).all():
            raise RejectionError("non-finite distance rejected")
        self._dists.append(distances)
        self._ids.append(vector_ids)
        self.ingested += distances.size
        self._pending += distances.size
        if self._pending > max(4 * self.capacity, 1024):
            self._compact()

    def _compact(self) -> None:
        d = np.concatenate(self._dists)
        i = np.concatenate(self._ids)
        order = np.lexsort((i, d))[: self.capacity]
        self._dists = [d[order]]
        self._ids = [i[order]]
        self._pending = 0

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        """Current (distances, ids), ascending by (distance, id)."""
        if not self._dists:
            return np.zeros(0, dtype=np.float32), np.zeros(0, dtype=np.uint64)
        self._compact()
        return self._dists[0], self._ids[0]

    def __len__(self) -> int:
        return len(self.contents()[0])

    @property
    def cycle_cost(self) -> int:
        return CYCLES_PER_INSERT * self.ingested


@dataclass(frozen=True)
class HierarchicalConfig:
    """Shape of the two-level selector: `num_streams` truncated level-1
    buffers of length `level1_len` feeding one exact level-2 buffer of
    length `k`."""

    k: int
    num_streams: int
    level1_len: int
    target_prob: float = 0.99

    def __post_init__(self):
        if self.k < 1 or self.num_streams < 1:
            raise ConfigurationError("k and num_streams must be >= 1")
        if not 1 <= self.level1_len <= self.k:
            raise ConfigurationError("level1_len must be in [1, k]")
        if not 0.0 < self.target_prob < 1.0:
            raise ConfigurationError("target_prob must be in (0, 1)")

    @classmethod
    def sized(cls, k: int, num_streams: int, target_prob: float = 0.99) -> "HierarchicalConfig":
        return cls(
            k=k,
            num_streams=num_streams,
            level1_len=max(1, truncated_queue_length(k, num_streams, target_prob)),
            target_prob=target_prob,
        )


def _binom_cdf(k: int, num_streams: int, upto: int) -> Fraction:
    """P[X <= upto] for X ~ Binomial(k, 1/num_streams), exact."""
    q = num_streams
    if upto >= k:
        return Fraction(1)
    if upto < 0:
        return Fraction(0)
    total = sum(math.comb(k, i) * (q - 1) ** (k - i) for i in range(upto + 1))
    return Fraction(total, q**k)


def stream_occupancy_pmf(k: int, num_streams: int, count: int) -> float:
    """Probability that a given stream receives exactly `count` of the k
    overall best items, under uniform assignment."""
    if not 0 <= count <= k:
        return 0.0
    q = num_streams
    return float(Fraction(math.comb(k, count) * (q - 1) ** (k - count), q**k))


def truncation_miss_prob(k: int, num_streams: int, length: int) -> float:
    """Union-bound probability that any stream holds more than `length` of
    the k best items, clamped to [0, 1]."""
    if not 0 <= length <= k:
        raise ConfigurationError("length must be in [0, k]")
    tail = num_streams * (1 - _binom_cdf(k, num_streams, length))
    return float(min(Fraction(1), max(Fraction(0), tail)))


def truncated_queue_length(k: int, num_streams: int, target_prob: float) -> int:
    """Smallest per-stream queue length whose union-bound miss probability
    is at most 1 - target_prob; never exceeds k.

    The bound is conservative: it treats the per-stream occupancies as q
    independent binomial tails, so sizing to it keeps at least target_prob
    of queries exactly equal to untruncated selection.
    """
    if k < 1 or num_streams < 1:
        raise ConfigurationError("k and num_streams must be >= 1")
    if not 0.0 < target_prob < 1.0:
        raise ConfigurationError("target_prob must be in (0, 1)")
    budget = Fraction(1) - Fraction(target_prob)
    for length in range(k + 1):
        tail = num_streams * (1 - _binom_cdf(k, num_streams, length))
        if tail <= budget:
            return length
    return k


def _smallest(dists: np.ndarray, ids: np.ndarray, cap: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((ids, dists))[:cap]
    return dists[order], ids[order]


def hierarchical_topk(
    streams: list[tuple[np.ndarray, np.ndarray]],
    k: int,
    level1_len: int | None = None,
    target_prob: float = 0.99,
) -> tuple[np.ndarray, np.ndarray]:
    """Fold each stream through its truncated level-1 queue, then the level-2
    queue; returns (distances, ids) ascending by (distance, id).

    With level1_len = k this is exact top-k selection over the concatenated
    streams. Folding whole arrays is observably identical to element-wise
    queue insertion (the buffers retain the smallest items regardless of
    arrival order), which property tests pin down.
    """
    if level1_len is None:
        level1_len = max(1, truncated_queue_length(k, len(streams), target_prob))
    if not 1 <= level1_len <= k:
        raise ConfigurationError("level1_len must be in [1, k]")
    survivors_d = []
    survivors_i = []
    for dists, ids in streams:
        dists = np.asarray(dists, dtype=np.float32)
        ids = np.asarray(ids, dtype=np.uint64)
        if dists.size == 0:
            continue
        if not np.isfinite(dists).all():
            raise RejectionError("non-finite distance rejected")
        d, i = _smallest(dists, ids, level1_len)
        survivors_d.append(d)
        survivors_i.append(i)
    if not survivors_d:
        return np.zeros(0, dtype=np.float32), np.zeros(0, dtype=np.uint64)
    return _smallest(np.concatenate(survivors_d), np.concatenate(survivors_i), k)
