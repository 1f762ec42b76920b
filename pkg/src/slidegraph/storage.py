"""On-disk formats for shards, metadata, degrees, vertex maps and exported values.

All integers are little-endian.  Shard layout::

    magic "GMPS" | version u16 | flags u16 (bit0 = weighted) | shard_id u32
    | start u64 | end u64 | edge_count u64
    | row  (end - start + 2) x u64
    | col  edge_count x u64
    | val  edge_count x f64        (weighted shards only)
    | checksum u64

The checksum is XXH64 (seed 0) over every byte that precedes it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import xxhash

from .errors import (
    BadMagicError,
    ChecksumError,
    CorruptShardError,
    FormatError,
    MetadataNotFoundError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .graph import DegreeTable, GraphMeta, VertexMap

FORMAT_VERSION = 1

SHARD_MAGIC = b"GMPS"
META_MAGIC = b"GMPM"
DEGREES_MAGIC = b"GMPD"
VERTEXMAP_MAGIC = b"GMPR"
VALUES_MAGIC = b"GMPV"

META_FILE = "meta.bin"
DEGREES_FILE = "degrees.bin"
VERTEXMAP_FILE = "vertexmap.bin"
VALUES_FILE = "values.bin"

FLAG_WEIGHTED = 0x1

_SHARD_HEADER = struct.Struct("<4sHHIQQQ")
_PREAMBLE = struct.Struct("<4sH")
_META_FIXED = struct.Struct("<QQIB")
_CHECKSUM = struct.Struct("<Q")

U64 = np.dtype("<u8")
I64 = np.dtype("<i8")
F64 = np.dtype("<f8")


def checksum(data) -> int:
    return xxhash.xxh64_intdigest(data)


def shard_path(workdir, k: int) -> Path:
    return Path(workdir) / f"shard-{k}.bin"


@dataclass(frozen=True)
class ShardHeader:
    shard_id: int
    start: int
    end: int
    edge_count: int
    weighted: bool
    checksum: int = 0

    @property
    def num_rows(self) -> int:
        return self.end - self.start + 1

    @property
    def file_size(self) -> int:
        per_edge = 16 if self.weighted else 8
        return _SHARD_HEADER.size + 8 * (self.num_rows + 1) + per_edge * self.edge_count + 8


@dataclass(eq=False)
class ShardCSR:
    """One vertex interval's in-edges in CSR form.

    ``col[row[r]:row[r + 1]]`` are the sources of local row ``r``
    (global vertex ``start + r``), in ascending order.
    """

    shard_id: int
    start: int
    end: int
    row: np.ndarray
    col: np.ndarray
    val: Optional[np.ndarray] = None

    @property
    def num_rows(self) -> int:
        return self.end - self.start + 1

    @property
    def edge_count(self) -> int:
        return int(self.row[-1]) if len(self.row) else 0

    @property
    def weighted(self) -> bool:
        return self.val is not None

    @property
    def header(self) -> ShardHeader:
        return ShardHeader(self.shard_id, self.start, self.end, self.edge_count, self.weighted)

    def in_neighbors(self, v: int) -> np.ndarray:
        r = v - self.start
        return self.col[self.row[r]:self.row[r + 1]]

    def in_weights(self, v: int) -> Optional[np.ndarray]:
        if self.val is None:
            return None
        r = v - self.start
        return self.val[self.row[r]:self.row[r + 1]]

    def dst_ids(self) -> np.ndarray:
        """Global destination ID of every edge, aligned with ``col``."""
        return np.repeat(np.arange(self.start, self.end + 1, dtype=np.int64), np.diff(self.row))

    def check(self) -> Optional[str]:
        if self.start > self.end:
            return f"start {self.start} > end {self.end}"
        if len(self.row) != self.num_rows + 1:
            return f"row has {len(self.row)} entries, expected {self.num_rows + 1}"
        if self.row[0] != 0:
            return "row[0] != 0"
        if np.any(np.diff(self.row.astype(np.int64)) < 0):
            return "row offsets decrease"
        if len(self.col) != self.edge_count:
            return f"col has {len(self.col)} entries, row claims {self.edge_count}"
        if self.val is not None and len(self.val) != self.edge_count:
            return f"val has {len(self.val)} entries, row claims {self.edge_count}"
        return None

    def __eq__(self, other):
        if not isinstance(other, ShardCSR):
            return NotImplemented
        if (self.shard_id, self.start, self.end) != (other.shard_id, other.start, other.end):
            return False
        if (self.val is None) != (other.val is None):
            return False
        same = np.array_equal(self.row, other.row) and np.array_equal(self.col, other.col)
        if self.val is not None:
            same = same and np.array_equal(self.val.view(np.uint64), other.val.view(np.uint64))
        return same


def encode_shard(shard: ShardCSR) -> bytes:
    problem = shard.check()
    if problem:
        raise CorruptShardError(None, problem)
    flags = FLAG_WEIGHTED if shard.weighted else 0
    parts = [
        _SHARD_HEADER.pack(SHARD_MAGIC, FORMAT_VERSION, flags, shard.shard_id,
                           shard.start, shard.end, shard.edge_count),
        np.ascontiguousarray(shard.row, dtype=U64).tobytes(),
        np.ascontiguousarray(shard.col, dtype=U64).tobytes(),
    ]
    if shard.weighted:
        parts.append(np.ascontiguousarray(shard.val, dtype=F64).tobytes())
    body = b"".join(parts)
    return body + _CHECKSUM.pack(checksum(body))


def _check_preamble(buf, magic: bytes, path) -> None:
    if len(buf) < _PREAMBLE.size:
        raise TruncatedFileError(path)
    found, version = _PREAMBLE.unpack_from(buf)
    if found != magic:
        raise BadMagicError(path, bytes(found), magic)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(path, version)


def _verify_checksum(buf, path) -> None:
    (stored,) = _CHECKSUM.unpack_from(buf, len(buf) - 8)
    computed = checksum(memoryview(buf)[:-8])
    if stored != computed:
        raise ChecksumError(path, stored, computed)


def decode_shard_header(buf, path=None) -> ShardHeader:
    _check_preamble(buf, SHARD_MAGIC, path)
    if len(buf) < _SHARD_HEADER.size:
        raise TruncatedFileError(path)
    _, _, flags, shard_id, start, end, edge_count = _SHARD_HEADER.unpack_from(buf)
    if start > end:
        raise CorruptShardError(path, f"start {start} > end {end}")
    return ShardHeader(shard_id, start, end, edge_count, bool(flags & FLAG_WEIGHTED))


def decode_shard(buf, path=None) -> ShardCSR:
    """Parse and validate a shard image.  Arrays are zero-copy views of ``buf``."""
    hdr = decode_shard_header(buf, path)
    expected = hdr.file_size
    if len(buf) < expected:
        raise TruncatedFileError(path)
    if len(buf) > expected:
        raise CorruptShardError(path, f"{len(buf) - expected} bytes of trailing data")
    _verify_checksum(buf, path)
    off = _SHARD_HEADER.size
    row = np.frombuffer(buf, dtype=U64, count=hdr.num_rows + 1, offset=off).view(I64)
    off += row.nbytes
    col = np.frombuffer(buf, dtype=U64, count=hdr.edge_count, offset=off).view(I64)
    off += col.nbytes
    val = None
    if hdr.weighted:
        val = np.frombuffer(buf, dtype=F64, count=hdr.edge_count, offset=off)
    shard = ShardCSR(hdr.shard_id, hdr.start, hdr.end, row, col, val)
    problem = shard.check()
    if problem:
        raise CorruptShardError(path, problem)
    return shard


def _atomic_write(path: Path, data: bytes) -> int:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    return len(data)


def write_shard(shard: ShardCSR, path) -> int:
    """Write ``shard`` to ``path``; returns the number of bytes written."""
    return _atomic_write(Path(path), encode_shard(shard))


def read_shard_bytes(path, opener: Callable = open) -> bytes:
    # One front-to-back read; no seeks.
    with opener(path, "rb") as f:
        return f.read()


def read_shard(path, opener: Callable = open) -> ShardCSR:
    return decode_shard(read_shard_bytes(path, opener), path)


def read_shard_header(path) -> ShardHeader:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(_SHARD_HEADER.size)
        f.seek(-8, os.SEEK_END)
        (stored,) = _CHECKSUM.unpack(f.read(8))
    hdr = decode_shard_header(head, path)
    return ShardHeader(hdr.shard_id, hdr.start, hdr.end, hdr.edge_count, hdr.weighted, stored)


# -- metadata ----------------------------------------------------------------

def encode_meta(meta: GraphMeta) -> bytes:
    head = _PREAMBLE.pack(META_MAGIC, FORMAT_VERSION) + _META_FIXED.pack(
        meta.num_vertices, meta.num_edges, meta.num_shards, int(meta.weighted))
    ivals = np.array(meta.intervals, dtype=U64).reshape(-1, 2)
    return head + ivals.tobytes()


def decode_meta(buf, path=None) -> GraphMeta:
    _check_preamble(buf, META_MAGIC, path)
    off = _PREAMBLE.size
    if len(buf) < off + _META_FIXED.size:
        raise TruncatedFileError(path)
    nv, ne, p, weighted = _META_FIXED.unpack_from(buf, off)
    off += _META_FIXED.size
    if len(buf) < off + 16 * p:
        raise TruncatedFileError(path)
    if len(buf) > off + 16 * p:
        raise FormatError(path, "trailing data")
    ivals = np.frombuffer(buf, dtype=U64, count=2 * p, offset=off).reshape(-1, 2)
    return GraphMeta(nv, ne, tuple(map(tuple, ivals.tolist())), bool(weighted))


def encode_degrees(degrees: DegreeTable) -> bytes:
    return (_PREAMBLE.pack(DEGREES_MAGIC, FORMAT_VERSION)
            + degrees.in_degree.astype(U64).tobytes()
            + degrees.out_degree.astype(U64).tobytes())


def decode_degrees(buf, path=None, num_vertices: Optional[int] = None) -> DegreeTable:
    _check_preamble(buf, DEGREES_MAGIC, path)
    payload = len(buf) - _PREAMBLE.size
    if payload % 16:
        raise TruncatedFileError(path)
    n = payload // 16
    if num_vertices is not None and n != num_vertices:
        raise FormatError(path, f"degree arrays cover {n} vertices, metadata says {num_vertices}")
    arr = np.frombuffer(buf, dtype=U64, offset=_PREAMBLE.size).astype(np.int64)
    return DegreeTable(arr[:n], arr[n:])


def write_meta(meta: GraphMeta, degrees: DegreeTable, workdir) -> None:
    workdir = Path(workdir)
    _atomic_write(workdir / META_FILE, encode_meta(meta))
    _atomic_write(workdir / DEGREES_FILE, encode_degrees(degrees))


def _read_required(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise MetadataNotFoundError(path) from None


def read_meta(workdir) -> tuple[GraphMeta, DegreeTable]:
    workdir = Path(workdir)
    meta_path, deg_path = workdir / META_FILE, workdir / DEGREES_FILE
    meta = decode_meta(_read_required(meta_path), meta_path)
    degrees = decode_degrees(_read_required(deg_path), deg_path, meta.num_vertices)
    return meta, degrees


# -- vertex map and exported values --------------------------------------------

def _framed(magic: bytes, extra: bytes, payload: bytes) -> bytes:
    body = _PREAMBLE.pack(magic, FORMAT_VERSION) + extra + payload
    return body + _CHECKSUM.pack(checksum(body))


def write_vertex_map(vmap: VertexMap, workdir) -> None:
    orig = np.ascontiguousarray(vmap.original, dtype=I64)
    _atomic_write(Path(workdir) / VERTEXMAP_FILE,
                  _framed(VERTEXMAP_MAGIC, struct.pack("<Q", len(orig)), orig.tobytes()))


def read_vertex_map(workdir) -> Optional[VertexMap]:
    path = Path(workdir) / VERTEXMAP_FILE
    if not path.exists():
        return None
    buf = path.read_bytes()
    _check_preamble(buf, VERTEXMAP_MAGIC, path)
    (n,) = struct.unpack_from("<Q", buf, _PREAMBLE.size)
    if len(buf) != _PREAMBLE.size + 8 + 8 * n + 8:
        raise TruncatedFileError(path)
    _verify_checksum(buf, path)
    return VertexMap(np.frombuffer(buf, dtype=I64, count=n, offset=_PREAMBLE.size + 8).copy())


_VALUE_KINDS = {0: F64, 1: I64}


def write_values(values: np.ndarray, path) -> int:
    """``values.bin``: preamble | kind u16 (0 = f64, 1 = i64) | n u64 | values | checksum."""
    kind = 0 if values.dtype.kind == "f" else 1
    arr = np.ascontiguousarray(values, dtype=_VALUE_KINDS[kind])
    return _atomic_write(Path(path), _framed(VALUES_MAGIC, struct.pack("<HQ", kind, len(arr)), arr.tobytes()))


def read_values(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    _check_preamble(buf, VALUES_MAGIC, path)
    kind, n = struct.unpack_from("<HQ", buf, _PREAMBLE.size)
    if kind not in _VALUE_KINDS:
        raise FormatError(path, f"unknown value kind {kind}")
    off = _PREAMBLE.size + 10
    if len(buf) != off + 8 * n + 8:
        raise TruncatedFileError(path)
    _verify_checksum(buf, path)
    return np.frombuffer(buf, dtype=_VALUE_KINDS[kind], count=n, offset=off).copy()
