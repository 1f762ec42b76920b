"""Sliding-window executor for pull-style vertex programs.

All vertex values live in memory in two arrays.  Each iteration streams every
(non-skipped) shard, lets each vertex of the shard's interval pull from the
previous iteration's values, writes the result into the other array, and
swaps the two at the barrier.  A shard owns every in-edge of its interval,
so each destination slot has exactly one writer and no locking is needed.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .cache import CacheMode, CacheStats, EdgeCache, default_budget, select_mode
from .errors import EngineError, InvariantViolation, SlideGraphError
from .graph import DegreeTable, GraphMeta
from .scheduler import (
    DEFAULT_ACTIVATION_THRESHOLD,
    DEFAULT_BITS_PER_KEY,
    DEFAULT_HASH_COUNT,
    DEFAULT_SEED,
    FilterBank,
    should_process,
)
from .storage import ShardCSR, decode_shard, read_meta, read_shard_bytes, shard_path, write_values

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 200


class VertexProgram:
    """User-defined ``init`` and ``update``.

    ``update`` sees one vertex, its in-neighbours (ascending source IDs), the
    read-only previous values and the degree table, and returns
    ``(new_value, changed)``.  ``update_shard`` is the batched form used by the
    engine; the default simply loops over ``update``.
    """

    name = "program"
    dtype = np.dtype(np.float64)

    def init(self, src: np.ndarray, dst: np.ndarray, degrees: DegreeTable, num_vertices: int) -> np.ndarray:
        raise NotImplementedError

    def update(self, v: int, in_neighbors: np.ndarray, src: np.ndarray,
               degrees: DegreeTable, weights: Optional[np.ndarray]) -> tuple[Any, bool]:
        raise NotImplementedError

    def check_graph(self, meta: GraphMeta, degrees: DegreeTable) -> None:
        """Reject work directories the program cannot run on."""

    def begin_iteration(self, src: np.ndarray, degrees: DegreeTable) -> Any:
        """Per-iteration context shared read-only by all shards."""
        return None

    def update_shard(self, shard: ShardCSR, src: np.ndarray, degrees: DegreeTable,
                     ctx: Any) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(new_values, changed)`` for every vertex of the shard's interval."""
        new = np.empty(shard.num_rows, dtype=self.dtype)
        changed = np.zeros(shard.num_rows, dtype=bool)
        for r, v in enumerate(range(shard.start, shard.end + 1)):
            new[r], changed[r] = self.update(v, shard.in_neighbors(v), src, degrees, shard.in_weights(v))
        return new, changed


@dataclass
class VertexState:
    src: np.ndarray
    dst: np.ndarray
    active: np.ndarray
    active_count: int = 0

    @classmethod
    def allocate(cls, num_vertices: int, dtype) -> "VertexState":
        return cls(np.zeros(num_vertices, dtype=dtype), np.zeros(num_vertices, dtype=dtype),
                   np.zeros(num_vertices, dtype=bool))

    @property
    def num_vertices(self) -> int:
        return len(self.src)

    @property
    def active_ratio(self) -> float:
        return self.active_count / self.num_vertices if self.num_vertices else 0.0

    @property
    def nbytes(self) -> int:
        return self.src.nbytes + self.dst.nbytes + self.active.nbytes


def process_shard(shard: ShardCSR, state: VertexState, program: VertexProgram,
                  degrees: DegreeTable, changed: np.ndarray, ctx: Any = None) -> int:
    """Update every vertex of ``shard``'s interval into ``state.dst``.

    Unchanged vertices carry their previous value over.  Only
    ``dst[start:end+1]`` and ``changed[start:end+1]`` are written.
    """
    s, e = shard.start, shard.end
    if s < 0 or e >= state.num_vertices or s > e:
        raise InvariantViolation(f"shard {shard.shard_id} interval ({s}, {e}) outside [0, {state.num_vertices})")
    new, flags = program.update_shard(shard, state.src, degrees, ctx)
    old = state.src[s:e + 1]
    state.dst[s:e + 1] = np.where(flags, new, old)
    changed[s:e + 1] = flags
    return int(np.count_nonzero(flags))


def swap_and_tally(state: VertexState, changed: np.ndarray) -> float:
    """Barrier step: changed vertices become the active set and the arrays swap."""
    state.active = changed
    state.active_count = int(np.count_nonzero(changed))
    state.src, state.dst = state.dst, state.src
    return state.active_ratio


@dataclass
class EngineOptions:
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    selective: bool = True
    activation_threshold: float = DEFAULT_ACTIVATION_THRESHOLD
    cache_mode: Union[str, int] = "auto"
    cache_budget: Optional[int] = None
    cache_lru: bool = False
    bloom_bits_per_key: float = DEFAULT_BITS_PER_KEY
    bloom_hash_count: int = DEFAULT_HASH_COUNT
    seed: int = DEFAULT_SEED
    metrics_path: Optional[Path] = None
    values_path: Optional[Path] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class IterationStats:
    iteration: int
    input_active_ratio: float
    active_ratio: float
    active_count: int
    shards_loaded: int
    shards_skipped: int
    cache_hits: int
    cache_misses: int
    bytes_read_disk: int
    bytes_requested: int
    filters_built: int
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class RunResult:
    values: np.ndarray
    stats: list[IterationStats]
    meta: GraphMeta
    cache_mode: CacheMode
    cache_stats: CacheStats

    @property
    def iterations(self) -> int:
        return len(self.stats)


@dataclass
class _ShardOutcome:
    loaded: bool = False
    hit: bool = False
    bytes_disk: int = 0
    bytes_requested: int = 0
    updated: int = 0
    filter_built: bool = False


class ShardLoader:
    """Serves shards through the edge cache, falling back to disk."""

    def __init__(self, workdir, cache: EdgeCache):
        self.workdir = Path(workdir)
        self.cache = cache

    def load(self, k: int) -> tuple[ShardCSR, bool, int]:
        path = shard_path(self.workdir, k)
        data = self.cache.get(k)
        hit = data is not None
        if not hit:
            data = read_shard_bytes(path)
        shard = decode_shard(data, path)
        if not hit:
            self.cache.admit(k, data)
        self.cache.record_request(len(data), not hit)
        return shard, hit, len(data)


def total_shard_bytes(workdir, meta: GraphMeta) -> int:
    return sum(shard_path(workdir, k).stat().st_size for k in range(meta.num_shards))


def resolve_cache(workdir, meta: GraphMeta, options: EngineOptions, reserved_bytes: int) -> EdgeCache:
    budget = options.cache_budget
    if budget is None:
        budget = default_budget(reserved_bytes)
    if options.cache_mode in ("auto", None):
        size = total_shard_bytes(workdir, meta)
        mode = select_mode(size, budget) if size > 0 else CacheMode.RAW
    else:
        mode = CacheMode(int(options.cache_mode))
    return EdgeCache(mode, budget, lru=options.cache_lru)


class Engine:
    def __init__(self, workdir, options: Optional[EngineOptions] = None):
        self.workdir = Path(workdir)
        self.options = options or EngineOptions()
        self.meta, self.degrees = read_meta(self.workdir)
        for k in range(self.meta.num_shards):
            if not shard_path(self.workdir, k).exists():
                raise EngineError(f"shard {k} missing from {self.workdir}")

    def _reserved_bytes(self, program: VertexProgram) -> int:
        n = self.meta.num_vertices
        vertex = 2 * n * program.dtype.itemsize + n
        degrees = self.degrees.in_degree.nbytes + self.degrees.out_degree.nbytes
        filters = int(self.options.bloom_bits_per_key * self.meta.num_edges / 8)
        largest = max((shard_path(self.workdir, k).stat().st_size for k in range(self.meta.num_shards)), default=0)
        return vertex + degrees + filters + self.options.workers * largest

    def run(self, program: VertexProgram) -> RunResult:
        opts = self.options
        meta, degrees = self.meta, self.degrees
        program.check_graph(meta, degrees)
        n = meta.num_vertices
        state = VertexState.allocate(n, program.dtype)
        state.active = np.asarray(program.init(state.src, state.dst, degrees, n), dtype=bool)
        state.active_count = int(np.count_nonzero(state.active))

        cache = resolve_cache(self.workdir, meta, opts, self._reserved_bytes(program))
        loader = ShardLoader(self.workdir, cache)
        filters = None
        if opts.selective:
            filters = FilterBank(self.workdir, meta.num_shards, opts.bloom_bits_per_key,
                                 opts.bloom_hash_count, opts.seed)
        log.info("%s: |V|=%d |E|=%d P=%d cache mode %d budget %d",
                 program.name, n, meta.num_edges, meta.num_shards, cache.mode, cache.budget_bytes)

        metrics = open(opts.metrics_path, "w") if opts.metrics_path else None
        pool = ThreadPoolExecutor(max_workers=opts.workers) if opts.workers > 1 else None
        stats: list[IterationStats] = []
        try:
            iteration = 0
            while state.active_count > 0 and iteration < opts.max_iterations:
                iteration += 1
                it_stats = self._iterate(iteration, program, state, loader, filters, pool)
                stats.append(it_stats)
                if metrics:
                    metrics.write(it_stats.to_json() + "\n")
                    metrics.flush()
        finally:
            if pool:
                pool.shutdown()
            if metrics:
                metrics.close()

        if opts.values_path:
            write_values(state.src, opts.values_path)
        return RunResult(state.src, stats, meta, cache.mode, cache.stats())

    def _iterate(self, iteration: int, program: VertexProgram, state: VertexState,
                 loader: ShardLoader, filters: Optional[FilterBank], pool) -> IterationStats:
        opts = self.options
        t0 = time.perf_counter()
        ratio_in = state.active_ratio
        gate_open = ratio_in > opts.activation_threshold
        active_ids = None if gate_open else np.flatnonzero(state.active)
        changed = np.zeros(state.num_vertices, dtype=bool)
        ctx = program.begin_iteration(state.src, self.degrees)

        def work(k: int) -> _ShardOutcome:
            out = _ShardOutcome()
            try:
                if filters is not None and not should_process(filters[k], active_ids, ratio_in,
                                                              opts.activation_threshold):
                    s, e = self.meta.intervals[k]
                    state.dst[s:e + 1] = state.src[s:e + 1]
                    return out
                shard, out.hit, out.bytes_requested = loader.load(k)
                out.loaded = True
                out.bytes_disk = 0 if out.hit else out.bytes_requested
                if filters is not None:
                    out.filter_built = filters.ensure(shard)
                out.updated = process_shard(shard, state, program, self.degrees, changed, ctx)
                return out
            except SlideGraphError as exc:
                if isinstance(exc, EngineError):
                    raise
                raise EngineError(f"iteration {iteration}, shard {k}: {exc}") from exc
            except OSError as exc:
                raise EngineError(f"iteration {iteration}, shard {k}: {exc}") from exc

        shard_ids = range(self.meta.num_shards)
        outcomes = list(pool.map(work, shard_ids)) if pool else [work(k) for k in shard_ids]
        ratio = swap_and_tally(state, changed)
        loaded = sum(o.loaded for o in outcomes)
        return IterationStats(
            iteration=iteration,
            input_active_ratio=ratio_in,
            active_ratio=ratio,
            active_count=state.active_count,
            shards_loaded=loaded,
            shards_skipped=self.meta.num_shards - loaded,
            cache_hits=sum(o.hit for o in outcomes),
            cache_misses=sum(o.loaded and not o.hit for o in outcomes),
            bytes_read_disk=sum(o.bytes_disk for o in outcomes),
            bytes_requested=sum(o.bytes_requested for o in outcomes),
            filters_built=sum(o.filter_built for o in outcomes),
            wall_time=time.perf_counter() - t0,
        )


def run(workdir, program: VertexProgram, options: Optional[EngineOptions] = None) -> RunResult:
    return Engine(workdir, options).run(program)


def read_metrics(path) -> list[IterationStats]:
    with open(path) as f:
        return [IterationStats(**json.loads(line)) for line in f if line.strip()]


def metrics_to_csv(records: list[IterationStats], path) -> None:
    import csv

    names = list(asdict(records[0]).keys()) if records else list(IterationStats.__dataclass_fields__)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=names)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))
