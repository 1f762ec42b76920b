"""Core graph types shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

VertexId = int

# Fixed-width value slots declared by the vertex programs.
REAL_SLOT = np.dtype("<f8")
INT_SLOT = np.dtype("<i8")
INF_DISTANCE = np.iinfo(np.int64).max


class Edge(NamedTuple):
    src: VertexId
    dst: VertexId
    weight: Optional[float] = None

    @property
    def effective_weight(self) -> float:
        return 1.0 if self.weight is None else self.weight


@dataclass(frozen=True)
class GraphMeta:
    """Global graph properties: vertex/edge/shard counts and the vertex intervals.

    ``intervals`` holds inclusive ``(start, end)`` pairs, one per shard.
    """

    num_vertices: int
    num_edges: int
    intervals: tuple[tuple[int, int], ...]
    weighted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple((int(s), int(e)) for s, e in self.intervals))

    @property
    def num_shards(self) -> int:
        return len(self.intervals)

    @property
    def starts(self) -> np.ndarray:
        return np.array([s for s, _ in self.intervals], dtype=np.int64)

    def interval_size(self, shard_id: int) -> int:
        s, e = self.intervals[shard_id]
        return e - s + 1

    def owner_shard(self, v: int) -> int:
        """Index of the shard whose interval contains ``v``."""
        if not 0 <= v < self.num_vertices:
            raise ValueError(f"vertex {v} outside [0, {self.num_vertices})")
        return int(np.searchsorted(self.starts, v, side="right")) - 1

    def owner_shards(self, vids: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.starts, vids, side="right") - 1


@dataclass
class DegreeTable:
    in_degree: np.ndarray
    out_degree: np.ndarray

    def __post_init__(self):
        self.in_degree = np.ascontiguousarray(self.in_degree, dtype=np.int64)
        self.out_degree = np.ascontiguousarray(self.out_degree, dtype=np.int64)
        if self.in_degree.shape != self.out_degree.shape:
            raise ValueError("in/out degree arrays differ in length")

    @property
    def num_vertices(self) -> int:
        return len(self.in_degree)

    @property
    def num_edges(self) -> int:
        return int(self.in_degree.sum())

    def __eq__(self, other):
        if not isinstance(other, DegreeTable):
            return NotImplemented
        return (np.array_equal(self.in_degree, other.in_degree)
                and np.array_equal(self.out_degree, other.out_degree))


def validate_meta(meta: GraphMeta) -> Optional[str]:
    """Return ``None`` when ``meta`` is consistent, else a message naming the
    first violated invariant."""
    if meta.num_vertices < 0 or meta.num_edges < 0:
        return "negative vertex or edge count"
    if meta.num_shards == 0:
        return "no intervals" if meta.num_vertices else "empty graph has no intervals"
    first_start = meta.intervals[0][0]
    if first_start != 0:
        return f"intervals[0] starts at {first_start}, expected 0"
    prev_end = -1
    for k, (s, e) in enumerate(meta.intervals):
        if s > e:
            return f"intervals[{k}] is empty ({s} > {e})"
        if s <= prev_end:
            return f"intervals[{k}] overlaps previous interval at {s}"
        if s != prev_end + 1:
            return f"gap between intervals[{k - 1}] and intervals[{k}] at {prev_end + 1}"
        prev_end = e
    if prev_end != meta.num_vertices - 1:
        return f"last interval ends at {prev_end}, expected {meta.num_vertices - 1}"
    return None


def intervals_from_sizes(sizes: Sequence[int]) -> tuple[tuple[int, int], ...]:
    out, start = [], 0
    for n in sizes:
        out.append((start, start + n - 1))
        start += n
    return tuple(out)


@dataclass
class VertexMap:
    """Dense remap of sparse input IDs; ``original[dense_id]`` is the input ID."""

    original: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def to_dense(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.original, ids)
        pos = np.minimum(pos, len(self.original) - 1)
        if len(self.original) == 0 or not np.array_equal(self.original[pos], ids):
            raise KeyError("id not present in vertex map")
        return pos

    def to_original(self, dense) -> np.ndarray:
        return self.original[np.asarray(dense, dtype=np.int64)]
