"""PageRank, single-source shortest paths and connected components as vertex programs."""

from __future__ import annotations

import logging
import warnings
from typing import Optional

import numpy as np

from .engine import VertexProgram
from .errors import DataError, InvariantViolation
from .graph import INF_DISTANCE, INT_SLOT, REAL_SLOT, DegreeTable, GraphMeta
from .storage import ShardCSR

log = logging.getLogger(__name__)

TELEPORT = 0.15
DAMPING = 0.85


def _segment_min(values: np.ndarray, row: np.ndarray, fill) -> np.ndarray:
    """Minimum of ``values[row[r]:row[r+1]]`` per row; ``fill`` for empty rows."""
    n_rows = len(row) - 1
    out = np.full(n_rows, fill, dtype=values.dtype)
    nonempty = np.flatnonzero(row[1:] > row[:-1])
    if len(nonempty):
        out[nonempty] = np.minimum.reduceat(values, row[:-1][nonempty])
    return out


class PageRank(VertexProgram):
    """rank(v) = teleport/|V| + damping * sum(rank(u) / d_out(u) for u in in-neighbours).

    ``epsilon=None`` marks a vertex changed on any bit difference; a positive
    epsilon treats smaller moves as converged and keeps the old value.
    """

    name = "pagerank"
    dtype = REAL_SLOT

    def __init__(self, teleport: float = TELEPORT, damping: float = DAMPING,
                 epsilon: Optional[float] = None):
        self.teleport = teleport
        self.damping = damping
        self.epsilon = epsilon
        self.num_vertices = 0

    def init(self, src, dst, degrees, num_vertices):
        self.num_vertices = num_vertices
        src[:] = dst[:] = 1 / num_vertices
        return np.ones(num_vertices, dtype=bool)

    def _changed(self, new, old):
        if self.epsilon is None:
            return new != old
        return np.abs(new - old) > self.epsilon

    def update(self, v, in_neighbors, src, degrees, weights):
        out_deg = degrees.out_degree
        total = 0.0
        for u in in_neighbors:
            if out_deg[u] == 0:
                raise InvariantViolation(f"source {u} has out-degree 0 but appears as in-neighbour of {v}")
            total += src[u] / out_deg[u]
        new = self.teleport / self.num_vertices + self.damping * total
        return new, bool(self._changed(new, src[v]))

    def begin_iteration(self, src, degrees):
        out_deg = degrees.out_degree
        share = np.zeros(len(src), dtype=np.float64)
        np.divide(src, out_deg, out=share, where=out_deg > 0)
        return share

    def update_shard(self, shard, src, degrees, share):
        if share is None:
            share = self.begin_iteration(src, degrees)
        # bincount accumulates sequentially, i.e. in ascending-source order per row
        rows = np.repeat(np.arange(shard.num_rows), np.diff(shard.row))
        sums = np.bincount(rows, weights=share[shard.col], minlength=shard.num_rows)
        new = self.teleport / self.num_vertices + self.damping * sums
        return new, self._changed(new, src[shard.start:shard.end + 1])


class SSSP(VertexProgram):
    """Shortest distances from ``source`` by repeated min-plus relaxation.

    Distances are 8-byte integers with ``INF_DISTANCE`` as infinity; weights
    are rounded to integers (with a warning if that loses information).
    ``real_valued=True`` switches the slots to 8-byte reals instead.
    """

    name = "sssp"

    def __init__(self, source: int = 0, real_valued: bool = False):
        self.source = source
        self.real_valued = real_valued
        self.dtype = REAL_SLOT if real_valued else INT_SLOT
        self.inf = np.inf if real_valued else INF_DISTANCE
        self._warned = False

    def check_graph(self, meta: GraphMeta, degrees: DegreeTable) -> None:
        if not 0 <= self.source < meta.num_vertices:
            raise DataError(f"source vertex {self.source} outside [0, {meta.num_vertices})")

    def init(self, src, dst, degrees, num_vertices):
        src[:] = dst[:] = self.inf
        src[self.source] = dst[self.source] = 0
        active = np.zeros(num_vertices, dtype=bool)
        active[self.source] = True
        return active

    def _weights(self, val: Optional[np.ndarray], n: int) -> np.ndarray:
        if val is None:
            return np.ones(n, dtype=self.dtype)
        if np.any(val < 0):
            raise DataError("negative edge weight; shortest paths need non-negative weights")
        if self.real_valued:
            return np.asarray(val, dtype=np.float64)
        rounded = np.rint(val)
        if not self._warned and not np.array_equal(rounded, val):
            self._warned = True
            warnings.warn("non-integral edge weights rounded to integers for SSSP", stacklevel=2)
            log.warning("non-integral edge weights rounded to integers")
        return rounded.astype(np.int64)

    def _relax(self, dist, w):
        if self.real_valued:
            return dist + w
        # saturating add: anything that would reach INF stays INF
        with np.errstate(over="ignore"):
            return np.where(dist >= self.inf - w, self.inf, dist + w)

    def update(self, v, in_neighbors, src, degrees, weights):
        w = self._weights(weights, len(in_neighbors))
        best = self.inf
        for u, wu in zip(in_neighbors, w):
            cand = self._relax(src[u], wu)
            best = min(best, cand)
        new = min(best, src[v])
        return new, bool(new != src[v])

    def update_shard(self, shard, src, degrees, ctx):
        w = self._weights(shard.val, shard.edge_count)
        cand = self._relax(src[shard.col], w)
        best = _segment_min(cand, shard.row, self.inf)
        old = src[shard.start:shard.end + 1]
        new = np.minimum(best, old)
        return new, new != old


class ConnectedComponents(VertexProgram):
    """Min-label propagation; needs a symmetrised graph for weak components."""

    name = "cc"
    dtype = INT_SLOT

    def __init__(self, require_symmetric: bool = True):
        self.require_symmetric = require_symmetric

    def check_graph(self, meta, degrees):
        if self.require_symmetric and not np.array_equal(degrees.in_degree, degrees.out_degree):
            raise DataError("connected components needs a symmetrized work directory "
                            "(preprocess with --symmetrize)")

    def init(self, src, dst, degrees, num_vertices):
        src[:] = dst[:] = np.arange(num_vertices, dtype=np.int64)
        return np.ones(num_vertices, dtype=bool)

    def update(self, v, in_neighbors, src, degrees, weights):
        label = INF_DISTANCE
        for u in in_neighbors:
            label = min(src[u], label)
        new = min(label, src[v])
        return new, bool(new != src[v])

    def update_shard(self, shard, src, degrees, ctx):
        best = _segment_min(src[shard.col], shard.row, INF_DISTANCE)
        old = src[shard.start:shard.end + 1]
        new = np.minimum(best, old)
        return new, new != old


APPS = {
    "pagerank": PageRank,
    "sssp": SSSP,
    "cc": ConnectedComponents,
}


def make_program(app: str, source: int = 0, real_weights: bool = False,
                 epsilon: Optional[float] = None, teleport: float = TELEPORT,
                 damping: float = DAMPING) -> VertexProgram:
    if app == "pagerank":
        return PageRank(teleport, damping, epsilon)
    if app == "sssp":
        return SSSP(source, real_valued=real_weights)
    if app == "cc":
        return ConnectedComponents()
    raise ValueError(f"unknown app {app!r}")
