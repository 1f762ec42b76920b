"""Selective scheduling: one Bloom filter per shard over its edge sources.

A shard is skipped when none of the currently active vertices can be one of
its sources.  Bloom filters have no false negatives, so a shard holding an
edge from an active vertex is never skipped.
"""

from __future__ import annotations

import logging
import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, TruncatedFileError
from .storage import FORMAT_VERSION, ShardCSR, _atomic_write, _check_preamble, _verify_checksum, checksum

log = logging.getLogger(__name__)

FILTER_MAGIC = b"GMPF"
DEFAULT_BITS_PER_KEY = 10.0
DEFAULT_HASH_COUNT = 7
DEFAULT_ACTIVATION_THRESHOLD = 0.001
DEFAULT_SEED = 0

_FILTER_HEADER = struct.Struct("<4sHQIQ")
_SEED_A = np.uint64(0x9E3779B97F4A7C15)
_SEED_B = np.uint64(0xC2B2AE3D27D4EB4F)
_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)


def _fmix64(x: np.ndarray) -> np.ndarray:
    # MurmurHash3 64-bit finalizer
    with np.errstate(over="ignore"):
        x = x ^ (x >> _S33)
        x = x * _M1
        x = x ^ (x >> _S33)
        x = x * _M2
        return x ^ (x >> _S33)


def _hash_pair(keys: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(keys, dtype=np.int64).view(np.uint64)
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    h1 = _fmix64(k ^ (_SEED_A ^ s))
    h2 = _fmix64(k ^ (_SEED_B ^ s)) | np.uint64(1)
    return h1, h2


def bit_positions(keys, m: int, k: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """``(len(keys), k)`` bit indices via double hashing ``h1 + i*h2 mod m``."""
    h1, h2 = _hash_pair(keys, seed)
    i = np.arange(k, dtype=np.uint64)
    with np.errstate(over="ignore"):
        pos = h1[:, None] + i[None, :] * h2[:, None]
    return (pos % np.uint64(m)).astype(np.int64)


def filter_size_bits(num_keys: int, bits_per_key: float) -> int:
    return int(math.ceil(bits_per_key * num_keys / 8.0)) * 8


@dataclass(eq=False)
class ShardFilter:
    shard_id: int
    m: int
    k: int
    inserted: int
    bits: np.ndarray  # uint8, m // 8 bytes, little bit order
    seed: int = DEFAULT_SEED

    def contains(self, ids) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if self.m == 0 or len(ids) == 0:
            return np.zeros(len(ids), dtype=bool)
        pos = bit_positions(ids, self.m, self.k, self.seed)
        hit = (self.bits[pos >> 3] >> (pos & 7).astype(np.uint8)) & 1
        return hit.all(axis=1)

    def test(self, vid: int) -> bool:
        return bool(self.contains([vid])[0])

    __contains__ = test

    def __eq__(self, other):
        if not isinstance(other, ShardFilter):
            return NotImplemented
        return ((self.shard_id, self.m, self.k, self.inserted, self.seed)
                == (other.shard_id, other.m, other.k, other.inserted, other.seed)
                and np.array_equal(self.bits, other.bits))


def build_filter(shard: ShardCSR, bits_per_key: float = DEFAULT_BITS_PER_KEY,
                 hash_count: int = DEFAULT_HASH_COUNT, seed: int = DEFAULT_SEED) -> ShardFilter:
    return filter_from_keys(shard.shard_id, np.unique(shard.col), bits_per_key, hash_count, seed)


def filter_from_keys(shard_id: int, keys, bits_per_key: float = DEFAULT_BITS_PER_KEY,
                     hash_count: int = DEFAULT_HASH_COUNT, seed: int = DEFAULT_SEED) -> ShardFilter:
    keys = np.unique(np.asarray(keys, dtype=np.int64))
    m = filter_size_bits(len(keys), bits_per_key)
    flat = np.zeros(m, dtype=bool)
    if m:
        flat[bit_positions(keys, m, hash_count, seed).ravel()] = True
    bits = np.packbits(flat, bitorder="little")
    return ShardFilter(shard_id, m, hash_count, len(keys), bits, seed)


def _active_ids(active) -> np.ndarray:
    active = np.asarray(active)
    if active.dtype == bool:
        return np.flatnonzero(active)
    return active.astype(np.int64, copy=False)


def iterate_active_probe_order(active, filt: ShardFilter, first_block: int = 64) -> tuple[bool, int]:
    """Probe active vertices in ascending ID order, stopping at the first hit.

    Returns ``(decision, probes)``.  Blocks grow geometrically so a hit near
    the front costs little while a miss costs O(|active|) vectorised work.
    """
    ids = _active_ids(active)
    probes, pos, block = 0, 0, first_block
    while pos < len(ids):
        chunk = ids[pos:pos + block]
        hits = filt.contains(chunk)
        if hits.any():
            return True, probes + int(np.argmax(hits)) + 1
        probes += len(chunk)
        pos += len(chunk)
        block *= 4
    return False, probes


def should_process(filt: Optional[ShardFilter], active, active_ratio: float,
                   threshold: float = DEFAULT_ACTIVATION_THRESHOLD) -> bool:
    """Decide whether a shard must be loaded this iteration.

    Above ``threshold`` every shard is processed.  A missing filter means the
    shard has not been seen yet, so it is processed too.
    """
    if active_ratio > threshold or filt is None:
        return True
    return iterate_active_probe_order(active, filt)[0]


# -- persistence ----------------------------------------------------------------

def filter_path(workdir, k: int) -> Path:
    return Path(workdir) / f"filter-{k}.bin"


def encode_filter(filt: ShardFilter) -> bytes:
    body = _FILTER_HEADER.pack(FILTER_MAGIC, FORMAT_VERSION, filt.m, filt.k, filt.inserted)
    body += np.ascontiguousarray(filt.bits, dtype=np.uint8).tobytes()
    return body + struct.pack("<Q", checksum(body))


def decode_filter(buf, shard_id: int, path=None, seed: int = DEFAULT_SEED) -> ShardFilter:
    _check_preamble(buf, FILTER_MAGIC, path)
    if len(buf) < _FILTER_HEADER.size + 8:
        raise TruncatedFileError(path)
    _, _, m, k, inserted = _FILTER_HEADER.unpack_from(buf)
    if m % 8:
        raise FormatError(path, f"bit count {m} not a multiple of 8")
    if len(buf) != _FILTER_HEADER.size + m // 8 + 8:
        raise TruncatedFileError(path)
    _verify_checksum(buf, path)
    bits = np.frombuffer(buf, dtype=np.uint8, count=m // 8, offset=_FILTER_HEADER.size).copy()
    return ShardFilter(shard_id, m, k, inserted, bits, seed)


def write_filter(filt: ShardFilter, path) -> int:
    return _atomic_write(Path(path), encode_filter(filt))


def read_filter(path, shard_id: int, seed: int = DEFAULT_SEED) -> ShardFilter:
    path = Path(path)
    return decode_filter(path.read_bytes(), shard_id, path, seed)


class FilterBank:
    """Per-shard filters for one run.

    Filters are built the first time a shard is loaded and written next to the
    shards.  Files on disk are reused only when their parameters match; the
    on-disk layout has no seed field, so only default-seed filters persist.
    """

    def __init__(self, workdir, num_shards: int, bits_per_key: float = DEFAULT_BITS_PER_KEY,
                 hash_count: int = DEFAULT_HASH_COUNT, seed: int = DEFAULT_SEED, persist: bool = True):
        self.workdir = Path(workdir)
        self.bits_per_key = bits_per_key
        self.hash_count = hash_count
        self.seed = seed
        self.persist = persist and seed == DEFAULT_SEED
        self._filters: list[Optional[ShardFilter]] = [None] * num_shards
        self._lock = threading.Lock()
        self.built = 0
        if self.persist:
            self._load_existing()

    def _load_existing(self) -> None:
        for k in range(len(self._filters)):
            path = filter_path(self.workdir, k)
            if not path.exists():
                continue
            try:
                filt = read_filter(path, k, self.seed)
            except FormatError as exc:
                log.warning("ignoring unreadable filter %s: %s", path, exc)
                continue
            if (filt.k == self.hash_count
                    and filt.m == filter_size_bits(filt.inserted, self.bits_per_key)):
                self._filters[k] = filt

    def __getitem__(self, k: int) -> Optional[ShardFilter]:
        return self._filters[k]

    def __len__(self):
        return len(self._filters)

    @property
    def complete(self) -> bool:
        return all(f is not None for f in self._filters)

    @property
    def nbytes(self) -> int:
        return sum(f.bits.nbytes for f in self._filters if f is not None)

    def ensure(self, shard: ShardCSR) -> bool:
        """Build (and persist) the filter for ``shard`` if missing.  Returns True if built."""
        if self._filters[shard.shard_id] is not None:
            return False
        filt = build_filter(shard, self.bits_per_key, self.hash_count, self.seed)
        if self.persist:
            write_filter(filt, filter_path(self.workdir, shard.shard_id))
        self._filters[shard.shard_id] = filt
        with self._lock:
            self.built += 1
        return True
