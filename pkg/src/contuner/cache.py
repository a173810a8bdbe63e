"""Persistent logit cache keyed by (example id, module id).

Storage is a single append-only log with an in-memory index rebuilt on
open. Each record carries a CRC32 so a crash-truncated tail is detected and
discarded; corruption anywhere before the tail is an integrity error.
Entries may only be stored for modules registered as frozen, because cached
logits must stay bit-identical to a recomputation forever.

Record layout (all integers little-endian):

    type byte 'E' | u32 id_len | id bytes | u32 key_len | key bytes
              | u32 count | count * f64 | u32 crc32(type..payload)
    type byte 'I' | u32 key_len | key bytes | u32 crc32(type..payload)

'E' stores logits; 'I' is a tombstone invalidating every entry of a module
(used when the selector is expanded and its old logits go stale).
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CacheIntegrityError, ContractViolationError, InvalidArgumentError

_ENTRY = b"E"
_INVALIDATE = b"I"


@dataclass(frozen=True)
class CacheEntry:
    example_id: str
    module_id: int
    logits: np.ndarray


def _pack_entry(entry: CacheEntry) -> bytes:
    id_bytes = entry.example_id.encode("utf-8")
    key_bytes = str(entry.module_id).encode("utf-8")
    vec = np.ascontiguousarray(entry.logits, dtype="<f8")
    body = (
        _ENTRY
        + struct.pack("<I", len(id_bytes))
        + id_bytes
        + struct.pack("<I", len(key_bytes))
        + key_bytes
        + struct.pack("<I", vec.size)
        + vec.tobytes()
    )
    return body + struct.pack("<I", zlib.crc32(body))


def _pack_invalidate(module_id: int) -> bytes:
    key_bytes = str(module_id).encode("utf-8")
    body = _INVALIDATE + struct.pack("<I", len(key_bytes)) + key_bytes
    return body + struct.pack("<I", zlib.crc32(body))


class _Truncated(Exception):
    """Internal: record runs past end of file."""


class LogitCache:
    """Append-only logit store. Reads are lock-free off the in-memory index;
    writes are serialized through one handle."""

    def __init__(self, path):
        self.path = Path(path)
        self._index: dict[tuple[str, int], np.ndarray] = {}
        self._frozen_ids: set[int] = set()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self._recover()
        self._fh = open(self.path, "ab")

    # -- lifecycle ---------------------------------------------------------

    def _recover(self) -> None:
        if not self.path.exists():
            self.path.touch()
            return
        data = self.path.read_bytes()
        pos = 0
        good_end = 0
        try:
            while pos < len(data):
                record_start = pos
                pos, kind, payload = self._read_record(data, pos)
                if kind == _ENTRY:
                    example_id, module_id, vec = payload
                    self._index[(example_id, module_id)] = vec
                else:
                    module_id = payload
                    stale = [k for k in self._index if k[1] == module_id]
                    for key in stale:
                        del self._index[key]
                good_end = pos
        except _Truncated:
            # Partial trailing record from an interrupted write: drop it.
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)
        except CacheIntegrityError:
            if record_start == good_end and self._is_final_record(data, record_start):
                # Checksum failure confined to the very tail: recoverable.
                with open(self.path, "r+b") as fh:
                    fh.truncate(good_end)
            else:
                raise

    def _is_final_record(self, data: bytes, start: int) -> bool:
        try:
            end, _, _ = self._read_record(data, start, verify=False)
        except _Truncated:
            return True
        return end >= len(data)

    @staticmethod
    def _take(data: bytes, pos: int, count: int) -> tuple[bytes, int]:
        if pos + count > len(data):
            raise _Truncated
        return data[pos : pos + count], pos + count

    def _read_record(self, data: bytes, pos: int, verify: bool = True):
        start = pos
        kind, pos = self._take(data, pos, 1)
        if kind not in (_ENTRY, _INVALIDATE):
            raise CacheIntegrityError(
                f"unknown record type {kind!r} at offset {start} in {self.path}"
            )
        if kind == _ENTRY:
            (id_len,), pos = self._unpack(data, pos, "<I")
            id_bytes, pos = self._take(data, pos, id_len)
            (key_len,), pos = self._unpack(data, pos, "<I")
            key_bytes, pos = self._take(data, pos, key_len)
            (count,), pos = self._unpack(data, pos, "<I")
            vec_bytes, pos = self._take(data, pos, count * 8)
        else:
            (key_len,), pos = self._unpack(data, pos, "<I")
            key_bytes, pos = self._take(data, pos, key_len)
        (crc,), pos = self._unpack(data, pos, "<I")
        if verify and crc != zlib.crc32(data[start : pos - 4]):
            raise CacheIntegrityError(
                f"checksum mismatch at offset {start} in {self.path}"
            )
        try:
            module_id = int(key_bytes.decode("utf-8"))
        except ValueError as exc:
            raise CacheIntegrityError(f"bad module key at offset {start}") from exc
        if kind == _INVALIDATE:
            return pos, kind, module_id
        vec = np.frombuffer(vec_bytes, dtype="<f8").astype(np.float64)
        vec.setflags(write=False)
        return pos, kind, (id_bytes.decode("utf-8"), module_id, vec)

    def _unpack(self, data: bytes, pos: int, fmt: str):
        size = struct.calcsize(fmt)
        raw, pos = self._take(data, pos, size)
        return struct.unpack(fmt, raw), pos

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "LogitCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- frozen-module registry ---------------------------------------------

    def mark_frozen(self, module_id: int) -> None:
        self._frozen_ids.add(module_id)

    def accepts(self, module_id: int) -> bool:
        return module_id in self._frozen_ids

    # -- operations ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._index)

    def get(self, example_id: str, module_id: int) -> np.ndarray | None:
        """Stored logit vector, bit-identical to what was put, or None."""
        vec = self._index.get((example_id, module_id))
        if vec is None:
            self.misses += 1
            return None
        self.hits += 1
        return vec

    def put(self, entry: CacheEntry) -> None:
        """Persist an entry. The owning module must be registered frozen.
        Re-putting an identical payload is a no-op; a conflicting payload is
        an integrity error."""
        if entry.module_id not in self._frozen_ids:
            raise ContractViolationError(
                f"module {entry.module_id} is not frozen; its logits may still change"
            )
        logits = np.ascontiguousarray(entry.logits, dtype=np.float64)
        if logits.ndim != 1:
            raise InvalidArgumentError("logits must be a 1-d vector")
        key = (entry.example_id, entry.module_id)
        with self._lock:
            existing = self._index.get(key)
            if existing is not None:
                if existing.shape == logits.shape and np.array_equal(
                    existing, logits
                ):
                    return
                raise CacheIntegrityError(
                    f"conflicting payload for key {key!r}"
                )
            stored = logits.copy()
            stored.setflags(write=False)
            self._fh.write(_pack_entry(CacheEntry(entry.example_id, entry.module_id, stored)))
            self._fh.flush()
            self._index[key] = stored

    def invalidate_module(self, module_id: int) -> None:
        """Drop every entry of a module and unregister it from the frozen set.
        Appends a tombstone so the invalidation survives reopening."""
        with self._lock:
            self._fh.write(_pack_invalidate(module_id))
            self._fh.flush()
            stale = [k for k in self._index if k[1] == module_id]
            for key in stale:
                del self._index[key]
            self._frozen_ids.discard(module_id)
