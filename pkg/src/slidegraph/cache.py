"""In-application cache of (optionally compressed) shard images.

Modes::

    0  no in-application cache; rely on the OS page cache
    1  raw shard bytes
    2  fast compressor (snappy)
    3  balanced compressor (deflate level 1)
    4  high-ratio compressor (deflate level 3)

Admission is first-come-first-kept: a shard is stored if it fits in what is
left of the budget, and nothing is evicted unless LRU is switched on.
"""

from __future__ import annotations

import enum
import logging
import os
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Callable, Optional

import cramjam

log = logging.getLogger(__name__)

SAFETY_FACTOR = 0.9


class CacheMode(enum.IntEnum):
    PAGE_CACHE = 0
    RAW = 1
    FAST = 2
    BALANCED = 3
    HIGH_RATIO = 4

    @property
    def assumed_ratio(self) -> Optional[float]:
        return ASSUMED_RATIOS.get(self)


# Mode 0 keeps nothing, so it needs no ratio.
ASSUMED_RATIOS = {
    CacheMode.RAW: 1.0,
    CacheMode.FAST: 2.0,
    CacheMode.BALANCED: 4.0,
    CacheMode.HIGH_RATIO: 5.0,
}


def _snappy_compress(data: bytes) -> bytes:
    return bytes(cramjam.snappy.compress_raw(data))


def _snappy_decompress(data: bytes) -> bytes:
    return bytes(cramjam.snappy.decompress_raw(data))


def _identity(data: bytes) -> bytes:
    return data


CODECS: dict[CacheMode, tuple[Callable[[bytes], bytes], Callable[[bytes], bytes]]] = {
    CacheMode.RAW: (_identity, _identity),
    CacheMode.FAST: (_snappy_compress, _snappy_decompress),
    CacheMode.BALANCED: (lambda b: zlib.compress(b, 1), zlib.decompress),
    CacheMode.HIGH_RATIO: (lambda b: zlib.compress(b, 3), zlib.decompress),
}


def compress(mode: CacheMode, data: bytes) -> bytes:
    return CODECS[CacheMode(mode)][0](data)


def decompress(mode: CacheMode, data: bytes) -> bytes:
    return CODECS[CacheMode(mode)][1](data)


def select_mode(total_shard_bytes: float, budget: float) -> CacheMode:
    """Lowest mode whose assumed ratio fits the shards in the budget, else mode 4."""
    if total_shard_bytes <= 0:
        raise ValueError("total shard size must be positive")
    for mode in (CacheMode.RAW, CacheMode.FAST, CacheMode.BALANCED, CacheMode.HIGH_RATIO):
        if total_shard_bytes / ASSUMED_RATIOS[mode] <= budget:
            return mode
    return CacheMode.HIGH_RATIO


def physical_memory() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 8 << 30


def default_budget(reserved_bytes: int, total_memory: Optional[int] = None) -> int:
    """Memory left after vertex arrays, filters and shard buffers, times 0.9."""
    total = physical_memory() if total_memory is None else total_memory
    return max(0, int((total - reserved_bytes) * SAFETY_FACTOR))


@dataclass(frozen=True)
class CacheEntry:
    shard_id: int
    payload: bytes
    mode: CacheMode
    uncompressed_size: int

    @property
    def size(self) -> int:
        return len(self.payload)


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    resident_bytes: int = 0
    budget_bytes: int = 0
    bytes_requested: int = 0
    bytes_from_disk: int = 0

    @property
    def theta(self) -> float:
        """Miss fraction by request count."""
        total = self.hits + self.misses
        return self.misses / total if total else 0.0

    def since(self, earlier: "CacheStats") -> "CacheStats":
        """Counter deltas relative to an earlier snapshot."""
        return replace(
            self,
            hits=self.hits - earlier.hits,
            misses=self.misses - earlier.misses,
            evictions=self.evictions - earlier.evictions,
            bytes_requested=self.bytes_requested - earlier.bytes_requested,
            bytes_from_disk=self.bytes_from_disk - earlier.bytes_from_disk,
        )


def measure_theta(stats: CacheStats) -> float:
    """Fraction of requested shard bytes that had to come from disk."""
    if stats.bytes_requested == 0:
        return 0.0
    return stats.bytes_from_disk / stats.bytes_requested


class EdgeCache:
    def __init__(self, mode: CacheMode, budget_bytes: int, lru: bool = False):
        self.mode = CacheMode(mode)
        self.lru = lru
        self._entries: "OrderedDict[int, CacheEntry]" = OrderedDict()
        self._lock = threading.Lock()
        self._stats = CacheStats(budget_bytes=max(0, int(budget_bytes)))

    @property
    def budget_bytes(self) -> int:
        return self._stats.budget_bytes

    @property
    def resident_bytes(self) -> int:
        return self._stats.resident_bytes

    def __contains__(self, shard_id: int) -> bool:
        return shard_id in self._entries

    def __len__(self):
        return len(self._entries)

    def stats(self) -> CacheStats:
        with self._lock:
            return replace(self._stats)

    def get(self, shard_id: int) -> Optional[bytes]:
        """Decompressed shard image, or ``None`` on a miss."""
        entry = self._entries.get(shard_id)
        if entry is None:
            with self._lock:
                self._stats.misses += 1
            return None
        try:
            data = decompress(entry.mode, entry.payload)
            if len(data) != entry.uncompressed_size:
                raise ValueError(f"size {len(data)} != {entry.uncompressed_size}")
        except Exception as exc:  # corrupt entry: drop it and fall back to disk
            log.warning("cache entry for shard %d failed to decompress: %s", shard_id, exc)
            with self._lock:
                if self._entries.pop(shard_id, None) is not None:
                    self._stats.resident_bytes -= entry.size
                self._stats.misses += 1
            return None
        with self._lock:
            self._stats.hits += 1
            if self.lru and shard_id in self._entries:
                self._entries.move_to_end(shard_id)
        return data

    def admit(self, shard_id: int, data: bytes) -> bool:
        """Store ``data`` if it fits in the remaining budget.  Mode 0 stores nothing."""
        if self.mode == CacheMode.PAGE_CACHE or self.budget_bytes == 0:
            return False
        if shard_id in self._entries:
            return True
        payload = compress(self.mode, bytes(data))
        entry = CacheEntry(shard_id, payload, self.mode, len(data))
        with self._lock:
            if shard_id in self._entries:
                return True
            if entry.size > self._stats.budget_bytes:
                return False
            if self.lru:
                while self._stats.resident_bytes + entry.size > self._stats.budget_bytes:
                    _, old = self._entries.popitem(last=False)
                    self._stats.resident_bytes -= old.size
                    self._stats.evictions += 1
            elif self._stats.resident_bytes + entry.size > self._stats.budget_bytes:
                return False
            self._entries[shard_id] = entry
            self._stats.resident_bytes += entry.size
        return True

    def record_request(self, nbytes: int, from_disk: bool) -> None:
        with self._lock:
            self._stats.bytes_requested += nbytes
            if from_disk:
                self._stats.bytes_from_disk += nbytes

    def compression_ratio(self) -> float:
        with self._lock:
            raw = sum(e.uncompressed_size for e in self._entries.values())
            stored = sum(e.size for e in self._entries.values())
        return raw / stored if stored else 1.0
