"""Turn a raw edge list into destination-grouped CSR shards.

Three passes over the data:

1. scan the input, collecting the vertex ID set and in/out degrees, then
   cut the vertex range into intervals (``compute_intervals``);
2. stream the input again and append every edge to the scratch file of the
   shard owning its destination (``scatter_edges``);
3. sort each scratch file by (destination, source) and write it as a CSR
   shard, together with ``meta.bin`` and ``degrees.bin`` (``build_csr_shards``).
"""

from __future__ import annotations

import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyGraphError,
    FormatError,
    InvariantViolation,
    ParseError,
    UnownedDestinationError,
    VertexRangeError,
)
from .graph import DegreeTable, GraphMeta, VertexMap, validate_meta
from .storage import (
    DEGREES_FILE,
    META_FILE,
    VALUES_FILE,
    VERTEXMAP_FILE,
    ShardCSR,
    read_shard,
    shard_path,
    write_meta,
    write_shard,
    write_vertex_map,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD_EDGES = 20_000_000
DEFAULT_BUFFER_BYTES = 4 << 20
DEFAULT_CHUNK_EDGES = 1 << 20

EDGE_FILE_MAGIC = b"GMPE"
_EDGE_FILE_HEADER = struct.Struct("<4sHH")

_PLAIN_RECORD = np.dtype([("src", "<i8"), ("dst", "<i8")])
_WEIGHTED_RECORD = np.dtype([("src", "<i8"), ("dst", "<i8"), ("w", "<f8")])


def record_dtype(weighted: bool) -> np.dtype:
    return _WEIGHTED_RECORD if weighted else _PLAIN_RECORD


class EdgeChunk(NamedTuple):
    src: np.ndarray
    dst: np.ndarray
    weight: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.src)


@dataclass(frozen=True)
class IntervalPlan:
    threshold_edge_num: int
    intervals: tuple[tuple[int, int], ...]

    @property
    def num_shards(self) -> int:
        return len(self.intervals)

    @property
    def starts(self) -> np.ndarray:
        return np.array([s for s, _ in self.intervals], dtype=np.int64)

    @property
    def num_vertices(self) -> int:
        return self.intervals[-1][1] + 1 if self.intervals else 0


@dataclass
class PreprocessReport:
    meta: GraphMeta
    remapped: bool
    bytes_read: int = 0
    bytes_written: int = 0
    step_bytes: dict = field(default_factory=dict)

    @property
    def io_bytes(self) -> int:
        return self.bytes_read + self.bytes_written


# -- input readers -------------------------------------------------------------

def write_edge_file(path, src, dst, weight=None) -> int:
    """Write the fixed-width binary edge format (``GMPE`` header + records)."""
    weighted = weight is not None
    rec = np.empty(len(src), dtype=record_dtype(weighted))
    rec["src"], rec["dst"] = src, dst
    if weighted:
        rec["w"] = weight
    with open(path, "wb") as f:
        f.write(_EDGE_FILE_HEADER.pack(EDGE_FILE_MAGIC, 1, int(weighted)))
        f.write(rec.tobytes())
    return _EDGE_FILE_HEADER.size + rec.nbytes


def write_edge_text(path, edges: Iterable[Sequence]) -> None:
    with open(path, "w") as f:
        for e in edges:
            f.write(" ".join(str(x) for x in e) + "\n")


def is_binary_edge_file(path) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == EDGE_FILE_MAGIC


def _binary_chunks(path, weighted, chunk_edges) -> Iterator[EdgeChunk]:
    with open(path, "rb") as f:
        head = f.read(_EDGE_FILE_HEADER.size)
        if len(head) < _EDGE_FILE_HEADER.size:
            raise FormatError(path, "unexpected end of file")
        _, version, flags = _EDGE_FILE_HEADER.unpack(head)
        if version != 1:
            raise FormatError(path, f"unsupported version {version}")
        has_w = bool(flags & 1)
        if weighted and not has_w:
            raise DataError(f"{path}: weights requested but edge file is unweighted")
        dt = record_dtype(has_w)
        while True:
            buf = f.read(chunk_edges * dt.itemsize)
            if not buf:
                return
            if len(buf) % dt.itemsize:
                raise FormatError(path, "unexpected end of file")
            rec = np.frombuffer(buf, dtype=dt)
            if rec["src"].min() < 0 or rec["dst"].min() < 0:
                raise DataError(f"{path}: negative vertex id")
            w = None
            if has_w and weighted is not False:
                w = rec["w"].copy()
                if np.any(w < 0) or np.any(np.isnan(w)):
                    raise DataError(f"{path}: negative or NaN edge weight")
            yield EdgeChunk(rec["src"].copy(), rec["dst"].copy(), w)


def _text_chunks(path, weighted, chunk_edges) -> Iterator[EdgeChunk]:
    ncols = None if weighted is None else (3 if weighted else 2)
    src, dst, w = [], [], []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            hash_at = line.find("#")
            if hash_at >= 0:
                line = line[:hash_at]
            toks = line.replace(",", " ").split()
            if not toks:
                continue
            if ncols is None:
                if len(toks) not in (2, 3):
                    raise ParseError(path, lineno, f"expected 2 or 3 fields, got {len(toks)}")
                ncols = len(toks)
            if len(toks) != ncols and not (ncols == 2 and weighted is False and len(toks) == 3):
                raise ParseError(path, lineno, f"expected {ncols} fields, got {len(toks)}")
            try:
                u, v = int(toks[0]), int(toks[1])
                x = float(toks[2]) if ncols == 3 else None
            except ValueError:
                raise ParseError(path, lineno, f"cannot parse {line.strip()!r}") from None
            if u < 0 or v < 0:
                raise ParseError(path, lineno, "negative vertex id")
            if x is not None and not x >= 0:
                raise ParseError(path, lineno, f"negative or NaN edge weight {toks[2]}")
            src.append(u)
            dst.append(v)
            if x is not None:
                w.append(x)
            if len(src) >= chunk_edges:
                yield _chunk(src, dst, w if ncols == 3 else None)
                src, dst, w = [], [], []
    if src:
        yield _chunk(src, dst, w if ncols == 3 else None)


def _chunk(src, dst, w) -> EdgeChunk:
    return EdgeChunk(np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                     None if w is None else np.array(w, dtype=np.float64))


def read_edge_chunks(path, weighted: Optional[bool] = None,
                     chunk_edges: int = DEFAULT_CHUNK_EDGES) -> Iterator[EdgeChunk]:
    """Stream edges from a text or binary edge file.

    Text lines are ``src dst [weight]`` separated by whitespace or commas; blank
    lines and ``#`` comments are skipped.  ``weighted=None`` auto-detects from the
    first data line, ``False`` drops any weight column.
    """
    if is_binary_edge_file(path):
        return _binary_chunks(path, weighted, chunk_edges)
    return _text_chunks(path, weighted, chunk_edges)


def as_chunks(edges) -> Iterator[EdgeChunk]:
    """Accept an iterable of ``EdgeChunk`` or of ``(src, dst[, w])`` tuples."""
    edges = iter(edges)
    first = next(edges, None)
    if first is None:
        return
    if isinstance(first, EdgeChunk):
        yield first
        yield from edges
        return
    rows = [first, *edges]
    weighted = len(rows[0]) > 2 and rows[0][2] is not None
    yield EdgeChunk(np.array([r[0] for r in rows], dtype=np.int64),
                    np.array([r[1] for r in rows], dtype=np.int64),
                    np.array([r[2] for r in rows], dtype=np.float64) if weighted else None)


def symmetrized(chunks: Iterable[EdgeChunk]) -> Iterator[EdgeChunk]:
    """Emit every edge in both directions (self-loops appear twice)."""
    for c in chunks:
        w = None if c.weight is None else np.concatenate([c.weight, c.weight])
        yield EdgeChunk(np.concatenate([c.src, c.dst]), np.concatenate([c.dst, c.src]), w)


def remapped(chunks: Iterable[EdgeChunk], vmap: Optional[VertexMap]) -> Iterator[EdgeChunk]:
    for c in chunks:
        if vmap is None:
            yield c
        else:
            yield EdgeChunk(vmap.to_dense(c.src), vmap.to_dense(c.dst), c.weight)


# -- step 1: degrees and intervals ----------------------------------------------

def count_degrees(edge_source, num_vertices: int) -> DegreeTable:
    """In/out degree of every vertex in a dense ``[0, num_vertices)`` ID space."""
    in_deg = np.zeros(num_vertices, dtype=np.int64)
    out_deg = np.zeros(num_vertices, dtype=np.int64)
    for c in as_chunks(edge_source):
        if len(c) == 0:
            continue
        hi = max(int(c.src.max()), int(c.dst.max()))
        lo = min(int(c.src.min()), int(c.dst.min()))
        if hi >= num_vertices:
            raise VertexRangeError(hi, num_vertices)
        if lo < 0:
            raise VertexRangeError(lo, num_vertices)
        in_deg += np.bincount(c.dst, minlength=num_vertices)
        out_deg += np.bincount(c.src, minlength=num_vertices)
    return DegreeTable(in_deg, out_deg)


class _IdCounter:
    """Sparse-safe accumulation of (id, in_count, out_count) over chunks."""

    def __init__(self, merge_every: int = 8):
        self._parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._merge_every = merge_every

    def add(self, c: EdgeChunk) -> None:
        ids = np.concatenate([c.src, c.dst])
        uniq, inv = np.unique(ids, return_inverse=True)
        n = len(c)
        out_cnt = np.bincount(inv[:n], minlength=len(uniq))
        in_cnt = np.bincount(inv[n:], minlength=len(uniq))
        self._parts.append((uniq, in_cnt, out_cnt))
        if len(self._parts) >= self._merge_every:
            self._parts = [self._merge()]

    def _merge(self):
        if not self._parts:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z
        if len(self._parts) == 1:
            return self._parts[0]
        ids = np.concatenate([p[0] for p in self._parts])
        uniq, inv = np.unique(ids, return_inverse=True)
        in_cnt = np.bincount(inv, weights=np.concatenate([p[1] for p in self._parts]),
                             minlength=len(uniq)).astype(np.int64)
        out_cnt = np.bincount(inv, weights=np.concatenate([p[2] for p in self._parts]),
                              minlength=len(uniq)).astype(np.int64)
        return uniq, in_cnt, out_cnt

    def result(self):
        return self._merge()


def scan_input(chunks: Iterable[EdgeChunk]) -> tuple[Optional[VertexMap], DegreeTable]:
    """Pass 1.  Returns a dense remap (``None`` when IDs are already ``0..n-1``)
    and the degree table in dense ID space."""
    counter = _IdCounter()
    for c in chunks:
        if len(c):
            counter.add(c)
    ids, in_cnt, out_cnt = counter.result()
    if len(ids) == 0:
        raise EmptyGraphError()
    vmap = None
    if ids[-1] != len(ids) - 1:
        vmap = VertexMap(ids.astype(np.int64))
    return vmap, DegreeTable(in_cnt, out_cnt)


def compute_intervals(in_degree, threshold_edge_num: int) -> IntervalPlan:
    """Cut ``[0, |V|)`` into contiguous intervals of at most ``threshold_edge_num``
    in-edges each, scanning vertices in ID order.

    A vertex whose in-degree alone exceeds the threshold gets an interval of
    its own; its in-edges are never split across shards.
    """
    if isinstance(in_degree, DegreeTable):
        in_degree = in_degree.in_degree
    if threshold_edge_num < 1:
        raise ValueError("threshold_edge_num must be >= 1")
    degs = np.asarray(in_degree, dtype=np.int64).tolist()
    n = len(degs)
    if n == 0:
        raise EmptyGraphError()
    intervals = []
    start = 0
    edge_num = 0
    for vid, d in enumerate(degs):
        edge_num += d
        # vid > start: never close an empty interval when vertex 0 is oversized
        if edge_num > threshold_edge_num and vid > start:
            intervals.append((start, vid - 1))
            start = vid
            edge_num = d
    intervals.append((start, n - 1))
    return IntervalPlan(threshold_edge_num, tuple(intervals))


# -- step 2: scatter -------------------------------------------------------------

def scatter_path(workdir, k: int) -> Path:
    return Path(workdir) / f"scatter-{k}.tmp"


def scatter_edges(edge_source, plan: IntervalPlan, workdir,
                  buffer_bytes: int = DEFAULT_BUFFER_BYTES,
                  weighted: Optional[bool] = None) -> tuple[list[Path], int]:
    """Append each edge to the scratch file of the shard owning its destination.

    Per-shard appends go through in-memory buffers of ``buffer_bytes`` that are
    flushed when full.  Returns the scratch paths and total bytes written.
    """
    workdir = Path(workdir)
    paths = [scatter_path(workdir, k) for k in range(plan.num_shards)]
    for p in paths:
        try:
            p.write_bytes(b"")
        except OSError as exc:
            raise DataError(f"cannot create {p}: {exc}") from exc
    starts = plan.starts
    nv = plan.num_vertices
    buffers: list[list[bytes]] = [[] for _ in paths]
    buffered = [0] * len(paths)
    written = 0

    def flush(k):
        nonlocal written
        if not buffers[k]:
            return
        data = b"".join(buffers[k])
        try:
            with open(paths[k], "ab") as f:
                f.write(data)
        except OSError as exc:
            raise DataError(f"write failed for {paths[k]}: {exc}") from exc
        written += len(data)
        buffers[k].clear()
        buffered[k] = 0

    dt = None
    for c in as_chunks(edge_source):
        if len(c) == 0:
            continue
        if dt is None:
            has_w = c.weight is not None if weighted is None else weighted
            dt = record_dtype(has_w)
        bad = (c.dst < 0) | (c.dst >= nv)
        if bad.any():
            raise UnownedDestinationError(int(c.dst[bad][0]))
        owner = np.searchsorted(starts, c.dst, side="right") - 1
        order = np.argsort(owner, kind="stable")
        rec = np.empty(len(c), dtype=dt)
        rec["src"], rec["dst"] = c.src, c.dst
        if "w" in dt.names:
            rec["w"] = 1.0 if c.weight is None else c.weight
        rec = rec[order]
        bounds = np.searchsorted(owner[order], np.arange(plan.num_shards + 1))
        for k in np.flatnonzero(np.diff(bounds)):
            piece = rec[bounds[k]:bounds[k + 1]].tobytes()
            buffers[k].append(piece)
            buffered[k] += len(piece)
            if buffered[k] >= buffer_bytes:
                flush(k)
    for k in range(len(paths)):
        flush(k)
    return paths, written


# -- step 3: CSR ------------------------------------------------------------------

def csr_from_edges(shard_id: int, start: int, end: int, src, dst, weight=None) -> ShardCSR:
    """Group edges by destination; sources within a row ascend (stable for ties)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    n_rows = end - start + 1
    if len(dst) and (dst.min() < start or dst.max() > end):
        raise UnownedDestinationError(int(dst[(dst < start) | (dst > end)][0]))
    order = np.lexsort((src, dst))
    counts = np.bincount(dst - start, minlength=n_rows)
    row = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row[1:])
    val = None if weight is None else np.asarray(weight, dtype=np.float64)[order]
    return ShardCSR(shard_id, start, end, row, src[order], val)


def _build_one(workdir: Path, plan: IntervalPlan, k: int, weighted: bool, verify: bool) -> tuple[int, int]:
    s, e = plan.intervals[k]
    spath = scatter_path(workdir, k)
    raw = spath.read_bytes()
    dt = record_dtype(weighted)
    if len(raw) % dt.itemsize:
        raise InvariantViolation(f"{spath}: size {len(raw)} not a multiple of {dt.itemsize}")
    rec = np.frombuffer(raw, dtype=dt)
    shard = csr_from_edges(k, s, e, rec["src"], rec["dst"], rec["w"] if weighted else None)
    out = shard_path(workdir, k)
    nbytes = write_shard(shard, out)
    if verify:
        # read back through the full validator (checksum included)
        read_shard(out)
    spath.unlink()
    return len(raw), nbytes


def build_csr_shards(workdir, plan: IntervalPlan, weighted: bool, degrees: DegreeTable,
                     workers: int = 1, verify: bool = True) -> tuple[GraphMeta, int, int]:
    """Convert every scratch file to a CSR shard and persist metadata.

    Returns ``(meta, bytes_read, bytes_written)``.
    """
    workdir = Path(workdir)
    meta = GraphMeta(degrees.num_vertices, degrees.num_edges, plan.intervals, weighted)
    problem = validate_meta(meta)
    if problem:
        raise InvariantViolation(f"interval plan invalid: {problem}")
    ks = range(plan.num_shards)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda k: _build_one(workdir, plan, k, weighted, verify), ks))
    else:
        results = [_build_one(workdir, plan, k, weighted, verify) for k in ks]
    write_meta(meta, degrees, workdir)
    meta_bytes = (workdir / META_FILE).stat().st_size + (workdir / DEGREES_FILE).stat().st_size
    return meta, sum(r for r, _ in results), sum(w for _, w in results) + meta_bytes


def _clear_stale(workdir: Path) -> None:
    for pattern in ("shard-*.bin", "filter-*.bin", "scatter-*.tmp", "*.tmp"):
        for p in workdir.glob(pattern):
            p.unlink()
    for name in (VERTEXMAP_FILE, VALUES_FILE):
        p = workdir / name
        if p.exists():
            p.unlink()


class _CountingChunks:
    """Re-iterable view over an input file that tallies bytes consumed."""

    def __init__(self, path, weighted, chunk_edges):
        self.path, self.weighted, self.chunk_edges = path, weighted, chunk_edges
        self.passes = 0

    def __iter__(self):
        self.passes += 1
        return read_edge_chunks(self.path, self.weighted, self.chunk_edges)

    @property
    def size(self) -> int:
        return os.path.getsize(self.path)


def preprocess(input_path, workdir, threshold_edge_num: int = DEFAULT_THRESHOLD_EDGES,
               symmetrize: bool = False, weighted: Optional[bool] = None,
               buffer_bytes: int = DEFAULT_BUFFER_BYTES, workers: int = 1,
               chunk_edges: int = DEFAULT_CHUNK_EDGES) -> PreprocessReport:
    """Run all three preprocessing steps on ``input_path`` into ``workdir``."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    source = _CountingChunks(input_path, weighted, chunk_edges)

    def stream():
        chunks = iter(source)
        return symmetrized(chunks) if symmetrize else chunks

    seen_weights = []

    def watched(chunks):
        for c in chunks:
            seen_weights.append(c.weight is not None)
            yield c

    vmap, degrees = scan_input(watched(stream()))
    is_weighted = bool(weighted) if weighted is not None else any(seen_weights)
    plan = compute_intervals(degrees.in_degree, threshold_edge_num)
    log.info("|V|=%d |E|=%d -> %d shards (threshold %d)",
             degrees.num_vertices, degrees.num_edges, plan.num_shards, threshold_edge_num)

    _clear_stale(workdir)
    if vmap is not None:
        write_vertex_map(vmap, workdir)
    _, scattered = scatter_edges(remapped(stream(), vmap), plan, workdir, buffer_bytes, is_weighted)
    meta, csr_read, csr_written = build_csr_shards(workdir, plan, is_weighted, degrees, workers)

    input_size = source.size
    report = PreprocessReport(meta, vmap is not None)
    report.step_bytes = {
        "scan_read": input_size,
        "scatter_read": input_size,
        "scatter_write": scattered,
        "csr_read": csr_read,
        "csr_write": csr_written,
    }
    report.bytes_read = 2 * input_size + csr_read
    report.bytes_written = scattered + csr_written
    return report
