"""Coarse-grained online filter over a labelled stream.

Each class keeps two running sums (features and squared feature norms), which
is enough to score a sample's representativeness and diversity in O(d).
A bounded min-heap keeps the highest-scoring candidates.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np


class StatsError(ValueError):
    pass


@dataclass
class ClassStreamStats:
    label: int
    dim: int
    count: float = 0.0
    sum_f: np.ndarray = None
    sum_sq: float = 0.0

    def __post_init__(self):
        if self.sum_f is None:
            self.sum_f = np.zeros(self.dim)

    @property
    def mean(self) -> np.ndarray:
        if self.count <= 0:
            raise StatsError(f"class {self.label} has no samples")
        return self.sum_f / self.count

    @property
    def mean_sq_norm(self) -> float:
        if self.count <= 0:
            raise StatsError(f"class {self.label} has no samples")
        return self.sum_sq / self.count


def update_stats(stats: ClassStreamStats, f, decay: float = 1.0) -> ClassStreamStats:
    """Fold one feature vector in; ``decay < 1`` discounts the history first."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (stats.dim,):
        raise StatsError(f"feature of shape {f.shape}, stats expect ({stats.dim},)")
    return ClassStreamStats(stats.label, stats.dim,
                            decay * stats.count + 1.0,
                            decay * stats.sum_f + f,
                            decay * stats.sum_sq + float(f @ f))


def rep_div(stats: ClassStreamStats, f) -> tuple[float, float]:
    mu = stats.mean
    q = stats.mean_sq_norm
    f = np.asarray(f, dtype=np.float64)
    diff = f - mu
    rep = -float(diff @ diff)
    div = float(f @ f) + q - 2.0 * float(f @ mu)
    return rep, div


def score(stats: ClassStreamStats, f) -> float:
    rep, div = rep_div(stats, f)
    return rep + div


@dataclass(order=True)
class ScoredCandidate:
    score: float
    arrival: int
    sample_id: int = field(compare=False)
    label: int = field(compare=False)
    x: np.ndarray = field(compare=False, repr=False)
    features: np.ndarray = field(compare=False, repr=False, default=None)


class CandidateBuffer:
    """Keeps the ``capacity`` highest-scored candidates seen so far.

    On equal scores the older arrival is evicted first, which is exactly the
    heap order on ``(score, arrival)``.
    """

    def __init__(self, capacity: int = 30):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._heap: list[ScoredCandidate] = []

    def __len__(self):
        return len(self._heap)

    def admit(self, cand: ScoredCandidate) -> ScoredCandidate | None:
        """Insert; returns the evicted candidate, if any."""
        if not np.isfinite(cand.score):
            raise ValueError("candidate score must be finite")
        if len(self._heap) < self.capacity:
            heapq.heappush(self._heap, cand)
            return None
        return heapq.heappushpop(self._heap, cand)

    def items(self) -> list[ScoredCandidate]:
        return sorted(self._heap, key=lambda c: c.arrival)

    def clear(self):
        self._heap.clear()


class ClassQuotaBuffer:
    """Per-class heaps whose sizes track each class's share of arrivals.

    Within a class the ranking is the same ``(score, arrival)`` order as
    :class:`CandidateBuffer`. When the buffer is over capacity the lowest
    entry of the class furthest above its quota is evicted.
    """

    def __init__(self, capacity: int = 30):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._heaps: dict[int, list[ScoredCandidate]] = {}
        self._arrived: dict[int, int] = {}

    def __len__(self):
        return sum(len(h) for h in self._heaps.values())

    def quotas(self) -> dict[int, float]:
        total = sum(self._arrived.values())
        return {c: self.capacity * n / total for c, n in self._arrived.items()}

    def admit(self, cand: ScoredCandidate) -> ScoredCandidate | None:
        if not np.isfinite(cand.score):
            raise ValueError("candidate score must be finite")
        self._arrived[cand.label] = self._arrived.get(cand.label, 0) + 1
        heapq.heappush(self._heaps.setdefault(cand.label, []), cand)
        if len(self) <= self.capacity:
            return None
        q = self.quotas()
        over = max((c for c, h in self._heaps.items() if h),
                   key=lambda c: (len(self._heaps[c]) - q[c], -c))
        return heapq.heappop(self._heaps[over])

    def items(self) -> list[ScoredCandidate]:
        return sorted((c for h in self._heaps.values() for c in h), key=lambda c: c.arrival)

    def clear(self):
        self._heaps.clear()


def drain_candidates(buffer: CandidateBuffer) -> dict[int, list[ScoredCandidate]]:
    """Snapshot of the buffer grouped by class; the buffer is left intact."""
    groups: dict[int, list[ScoredCandidate]] = {}
    for cand in buffer.items():
        groups.setdefault(cand.label, []).append(cand)
    return dict(sorted(groups.items()))


class StreamFilter:
    """Per-class running statistics plus the candidate buffer."""

    def __init__(self, feature_dim: int, capacity: int = 30, decay: float = 1.0,
                 quota: str = "none"):
        self.feature_dim = feature_dim
        self.decay = decay
        self.stats: dict[int, ClassStreamStats] = {}
        if quota == "none":
            self.buffer = CandidateBuffer(capacity)
        elif quota == "proportional":
            self.buffer = ClassQuotaBuffer(capacity)
        else:
            raise ValueError(f"unknown buffer quota {quota!r}")
        self._arrivals = itertools.count()

    def observe(self, sample_id: int, x, label: int, f) -> ScoredCandidate:
        label = int(label)
        st = self.stats.get(label) or ClassStreamStats(label, self.feature_dim)
        st = update_stats(st, f, self.decay)
        self.stats[label] = st
        cand = ScoredCandidate(score(st, f), next(self._arrivals), sample_id, label,
                               np.asarray(x), np.asarray(f))
        self.buffer.admit(cand)
        return cand

    def observe_window(self, ids, X, labels, F):
        for i, x, y, f in zip(ids, X, labels, F):
            self.observe(int(i), x, int(y), f)

    def snapshot(self) -> list[ScoredCandidate]:
        return self.buffer.items()
