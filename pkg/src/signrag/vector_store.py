"""Exact top-k L2 nearest-neighbour store with a single-file binary format.

File layout (all integers little-endian)::

    header   magic "SRAG" | u16 format version | u8 dtype (1 = float32)
             | u8 reserved | u32 dimension | u32 count
    entry*   u16 len + UTF-8 code
             u32 len + UTF-8 appearance
             u8 has_location [u32 len + UTF-8 location]
             dimension x f32 vector
    footer   u32 CRC-32 of everything before it

Vectors are stored in single precision; distances are computed in double
precision. Hits are ordered by distance, then by code.
"""
from __future__ import annotations

import os
import struct
import tempfile
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from .catalog import validate_code
from .descriptor import SignDescription
from .errors import (
    EmptyStoreError,
    NotFoundError,
    StoreCorruptionError,
    StoreFormatError,
    ValidationError,
)

MAGIC = b"SRAG"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4sHBBII")


@dataclass(frozen=True, eq=False)
class StoreEntry:
    code: str
    vector: np.ndarray
    description: SignDescription

    def __post_init__(self):
        validate_code(self.code)
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1 or vec.size == 0:
            raise ValidationError(f"vector for {self.code!r} must be a non-empty 1-D array")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"vector for {self.code!r} has non-finite values")
        object.__setattr__(self, "vector", vec)

    def __eq__(self, other):
        if not isinstance(other, StoreEntry):
            return NotImplemented
        return (
            self.code == other.code
            and self.description == other.description
            and self.vector.tobytes() == other.vector.tobytes()
        )


@dataclass(frozen=True)
class QueryHit:
    code: str
    distance: float
    rank: int


class _Snapshot:
    """Immutable view swapped in whole on every mutation."""

    __slots__ = ("codes", "matrix", "descriptions", "code_rank", "index")

    def __init__(self, codes, matrix, descriptions):
        self.codes = codes
        self.matrix = matrix
        self.descriptions = descriptions
        order = np.argsort(np.array(codes, dtype=object), kind="stable") if codes else np.empty(0, int)
        self.code_rank = np.empty(len(codes), dtype=np.int64)
        self.code_rank[order] = np.arange(len(codes))
        self.index = {c: i for i, c in enumerate(codes)}


class VectorStore:
    """Flat exact L2 index.

    Readers never lock: they work on the current snapshot, which is replaced
    atomically by :meth:`upsert` and :meth:`delete` under a writer lock.
    """

    def __init__(self, dimension: int, entries: Iterable[StoreEntry] = ()):
        if int(dimension) < 1:
            raise ValidationError("dimension must be positive")
        self.dimension = int(dimension)
        self._write_lock = threading.Lock()
        entries = list(entries)
        seen = set()
        for e in entries:
            if e.vector.shape[0] != self.dimension:
                raise ValidationError(
                    f"vector for {e.code!r} has dimension {e.vector.shape[0]}, store has {self.dimension}"
                )
            if e.code in seen:
                raise ValidationError(f"duplicate sign code {e.code!r}")
            seen.add(e.code)
        matrix = np.ascontiguousarray(
            np.vstack([e.vector for e in entries]) if entries else np.empty((0, self.dimension)),
            dtype=np.float32,
        )
        self._snap = _Snapshot([e.code for e in entries], matrix, [e.description for e in entries])

    # -- reading -----------------------------------------------------------

    def __len__(self):
        return len(self._snap.codes)

    def __contains__(self, code):
        return code in self._snap.index

    @property
    def codes(self) -> List[str]:
        return list(self._snap.codes)

    def entries(self) -> List[StoreEntry]:
        s = self._snap
        return [StoreEntry(c, s.matrix[i].copy(), s.descriptions[i]) for i, c in enumerate(s.codes)]

    def get(self, code: str) -> StoreEntry:
        s = self._snap
        i = s.index.get(code)
        if i is None:
            raise NotFoundError(f"sign code {code!r} not in store")
        return StoreEntry(code, s.matrix[i].copy(), s.descriptions[i])

    def description(self, code: str) -> SignDescription:
        s = self._snap
        i = s.index.get(code)
        if i is None:
            raise NotFoundError(f"sign code {code!r} not in store")
        return s.descriptions[i]

    def distances(self, vector) -> np.ndarray:
        """L2 distance from ``vector`` to every entry, in storage order."""
        return self._distances(self._snap, self._check_query(vector))

    def _check_query(self, vector):
        q = np.asarray(vector, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise ValidationError(f"query has shape {q.shape}, store dimension is {self.dimension}")
        if not np.all(np.isfinite(q)):
            raise ValidationError("query vector has non-finite values")
        # round to storage precision so re-embedding an indexed text lands at distance 0
        return q.astype(np.float32).astype(np.float64)

    @staticmethod
    def _distances(snap, q):
        diff = snap.matrix.astype(np.float64) - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def query(self, vector, k: int = 5) -> List[QueryHit]:
        if int(k) < 1:
            raise ValidationError(f"k must be a positive integer, got {k}")
        snap = self._snap
        n = len(snap.codes)
        if n == 0:
            raise EmptyStoreError("cannot query an empty store")
        q = self._check_query(vector)
        d = self._distances(snap, q)
        k = min(int(k), n)
        if k < n:
            # everything tied with the k-th distance stays in play for the code tie-break
            kth = np.partition(d, k - 1)[k - 1]
            pool = np.flatnonzero(d <= kth)
        else:
            pool = np.arange(n)
        order = pool[np.lexsort((snap.code_rank[pool], d[pool]))][:k]
        return [QueryHit(snap.codes[i], float(d[i]), r) for r, i in enumerate(order, start=1)]

    # -- writing -----------------------------------------------------------

    def upsert(self, entry: StoreEntry) -> None:
        if entry.vector.shape[0] != self.dimension:
            raise ValidationError(
                f"vector for {entry.code!r} has dimension {entry.vector.shape[0]}, store has {self.dimension}"
            )
        with self._write_lock:
            s = self._snap
            codes, descs = list(s.codes), list(s.descriptions)
            i = s.index.get(entry.code)
            if i is None:
                codes.append(entry.code)
                descs.append(entry.description)
                matrix = np.vstack([s.matrix, entry.vector[None, :]])
            else:
                descs[i] = entry.description
                matrix = s.matrix.copy()
                matrix[i] = entry.vector
            self._snap = _Snapshot(codes, np.ascontiguousarray(matrix, dtype=np.float32), descs)

    def delete(self, code: str) -> None:
        with self._write_lock:
            s = self._snap
            i = s.index.get(code)
            if i is None:
                raise NotFoundError(f"sign code {code!r} not in store")
            keep = [j for j in range(len(s.codes)) if j != i]
            self._snap = _Snapshot(
                [s.codes[j] for j in keep],
                np.ascontiguousarray(s.matrix[keep], dtype=np.float32),
                [s.descriptions[j] for j in keep],
            )

    # -- comparison --------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, VectorStore):
            return NotImplemented
        return self.dimension == other.dimension and self.entries() == other.entries()

    def __repr__(self):
        return f"VectorStore(dimension={self.dimension}, count={len(self)})"

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        s = self._snap
        parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_FLOAT32, 0, self.dimension, len(s.codes))]
        for i, code in enumerate(s.codes):
            desc = s.descriptions[i]
            parts.append(_pack_str(code, "<H"))
            parts.append(_pack_str(desc.appearance, "<I"))
            if desc.location is None:
                parts.append(b"\x00")
            else:
                parts.append(b"\x01" + _pack_str(desc.location, "<I"))
            parts.append(s.matrix[i].astype("<f4").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "VectorStore":
        if len(data) >= 4 and data[:4] != MAGIC:
            raise StoreFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        reader = _Reader(data)
        magic, version, dtype, _, dimension, count = reader.unpack(_HEADER, "header")
        if magic != MAGIC:
            raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise StoreFormatError(f"unsupported store format version {version}")
        if dtype != DTYPE_FLOAT32:
            raise StoreFormatError(f"unsupported vector dtype code {dtype}")
        if dimension < 1:
            raise StoreCorruptionError("dimension must be positive", 10)
        entries = []
        for n in range(count):
            code = reader.string("<H", f"code of entry {n}")
            appearance = reader.string("<I", f"appearance of entry {n}")
            (flag,) = reader.unpack(struct.Struct("<B"), f"location flag of entry {n}")
            location = reader.string("<I", f"location of entry {n}") if flag else None
            raw = reader.take(4 * dimension, f"vector of entry {n}")
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float32)
            try:
                entries.append(StoreEntry(code, vec, SignDescription(appearance, location)))
            except ValidationError as exc:
                raise StoreCorruptionError(f"invalid entry {n}: {exc}", reader.pos) from None
        body_end = reader.pos
        (crc,) = reader.unpack(struct.Struct("<I"), "checksum")
        if reader.pos != len(data):
            raise StoreCorruptionError("trailing bytes after checksum", reader.pos)
        if crc != zlib.crc32(data[:body_end]):
            raise StoreCorruptionError("checksum mismatch", body_end)
        try:
            return cls(dimension, entries)
        except ValidationError as exc:
            raise StoreCorruptionError(str(exc), body_end) from None

    def save(self, path) -> None:
        """Write atomically: a partial file never replaces an existing one."""
        path = Path(path)
        payload = self.to_bytes()
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "VectorStore":
        return cls.from_bytes(Path(path).read_bytes())


def _pack_str(text: str, fmt: str) -> bytes:
    raw = text.encode("utf-8")
    limit = 0xFFFF if fmt == "<H" else 0xFFFFFFFF
    if len(raw) > limit:
        raise ValidationError(f"string of {len(raw)} bytes too long for store field")
    return struct.pack(fmt, len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise StoreCorruptionError(f"file truncated while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct, what):
        return st.unpack(self.take(st.size, what))

    def string(self, fmt, what):
        (n,) = self.unpack(struct.Struct(fmt), f"length of {what}")
        start = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise StoreCorruptionError(f"invalid UTF-8 in {what}", start) from None


def build(entries: Iterable[StoreEntry], dimension: Optional[int] = None) -> VectorStore:
    """Build a store from entries; dimension is inferred from the first entry."""
    entries = list(entries)
    if dimension is None:
        if not entries:
            raise ValidationError("cannot infer dimension of an empty store")
        dimension = entries[0].vector.shape[0]
    return VectorStore(dimension, entries)


def save(store: VectorStore, path) -> None:
    store.save(path)


def load(path) -> VectorStore:
    return VectorStore.load(path)
