"""Canonical event streams, windowing and EVT1/CSV serialization.

An :class:`EventStream` is a column store of ``(t, x, y, p)`` events with a
sensor geometry ``(width, height)`` and a half-open time window ``[t0, t1)``
in integer microseconds.  Streams are always canonical: sorted by ``t`` with
ties broken by ``(y, x, p)`` ascending.  They are immutable; every operation
returns a new stream.

EVT1 layout (little-endian)::

    magic "EVT1" | version u16 = 1 | W u16 | H u16 | t0 u64 | t1 u64 | count u64
    count x { t u64 | x u16 | y u16 | p i8 | pad i8 = 0 }
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    BadPolarity,
    CorruptHeader,
    GeometryMismatch,
    InvalidRange,
    OutOfBounds,
    OutOfWindow,
    TruncatedRecord,
    WindowMismatch,
)

EVT1_MAGIC = b"EVT1"
EVT1_VERSION = 1
EVT1_HEADER = struct.Struct("<4sHHHQQQ")
EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])
CSV_HEADER = "t_us,x,y,p"


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _frozen(a, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out.flags.writeable:
        if out is a:
            out = out.copy()  # never flip flags on the caller's array
        out.flags.writeable = False
    return out


def sort_key(t, x, y, p, width: int, height: int, t0: int):
    """Single int64 key reproducing the (t, y, x, p) order, or None if it would overflow."""
    span = int(t.max()) - t0 + 1 if len(t) else 1
    cells = 2 * width * height
    if span * cells >= 2**62:
        return None
    key = (t.astype(np.int64) - t0) * cells
    key += (y.astype(np.int64) * width + x) * 2
    key += p > 0
    return key


def _canonical_order(t, x, y, p, width, height, t0) -> np.ndarray:
    key = sort_key(t, x, y, p, width, height, t0)
    if key is None:
        return np.lexsort((p, x, y, t))
    return np.argsort(key, kind="stable")


class EventStream:
    """Immutable canonical event stream.

    Use :func:`canonicalize` or :meth:`from_arrays` to build one from
    unordered data; the constructor validates but never reorders.
    """

    __slots__ = ("t", "x", "y", "p", "width", "height", "t0", "t1")

    def __init__(self, t, x, y, p, width: int, height: int, t0: int, t1: int, *, check: bool = True):
        object.__setattr__(self, "t", _frozen(t, np.int64))
        object.__setattr__(self, "x", _frozen(x, np.int32))
        object.__setattr__(self, "y", _frozen(y, np.int32))
        object.__setattr__(self, "p", _frozen(p, np.int8))
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "t0", int(t0))
        object.__setattr__(self, "t1", int(t1))
        if check:
            self._validate()

    def __setattr__(self, name, value):
        raise AttributeError("EventStream is immutable")

    def _validate(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("column lengths differ")
        if self.width <= 0 or self.height <= 0:
            raise InvalidRange(f"bad geometry {self.width}x{self.height}")
        if not 0 <= self.t0 < self.t1:
            raise InvalidRange(f"bad window [{self.t0}, {self.t1})")
        if n == 0:
            return
        if not np.all((self.p == 1) | (self.p == -1)):
            raise BadPolarity("polarity must be -1 or +1")
        if self.x.min() < 0 or self.x.max() >= self.width or self.y.min() < 0 or self.y.max() >= self.height:
            raise OutOfBounds(f"coordinates outside {self.width}x{self.height}")
        if self.t.min() < self.t0 or self.t.max() >= self.t1:
            raise OutOfWindow(f"timestamps outside [{self.t0}, {self.t1})")
        key = sort_key(self.t, self.x, self.y, self.p, self.width, self.height, self.t0)
        if key is not None:
            ordered = bool(np.all(key[1:] >= key[:-1]))
        else:
            ordered = bool(np.all(np.diff(self.t) >= 0)) and np.array_equal(
                _canonical_order(self.t, self.x, self.y, self.p, self.width, self.height, self.t0), np.arange(n)
            )
        if not ordered:
            raise ValueError("events are not in canonical (t, y, x, p) order")

    # construction -----------------------------------------------------------------
    @classmethod
    def from_arrays(cls, t, x, y, p, geometry: tuple[int, int], window: tuple[int, int]) -> "EventStream":
        """Validate and sort raw columns into a canonical stream."""
        width, height = geometry
        t0, t1 = window
        t = np.asarray(t, dtype=np.int64).ravel()
        x = np.asarray(x, dtype=np.int64).ravel()
        y = np.asarray(y, dtype=np.int64).ravel()
        p = np.asarray(p, dtype=np.int64).ravel()
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("column lengths differ")
        if width <= 0 or height <= 0:
            raise InvalidRange(f"bad geometry {width}x{height}")
        if not 0 <= t0 < t1:
            raise InvalidRange(f"bad window [{t0}, {t1})")
        if len(t):
            if not np.all((p == 1) | (p == -1)):
                raise BadPolarity("polarity must be -1 or +1")
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                raise OutOfBounds(f"coordinates outside {width}x{height}")
            if t.min() < t0 or t.max() >= t1:
                raise OutOfWindow(f"timestamps outside [{t0}, {t1})")
            order = _canonical_order(t, x, y, p, width, height, t0)
            t, x, y, p = t[order], x[order], y[order], p[order]
        return cls(t, x, y, p, width, height, t0, t1, check=False)

    @classmethod
    def empty(cls, geometry: tuple[int, int], window: tuple[int, int]) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, geometry[0], geometry[1], window[0], window[1])

    def replace(self, t=None, x=None, y=None, p=None, geometry=None, window=None) -> "EventStream":
        """Copy with some columns or metadata swapped; result is re-canonicalized."""
        g = geometry or self.geometry
        w = window or self.window
        return EventStream.from_arrays(
            self.t if t is None else t,
            self.x if x is None else x,
            self.y if y is None else y,
            self.p if p is None else p,
            g,
            w,
        )

    # accessors ----------------------------------------------------------------------
    @property
    def geometry(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def window(self) -> tuple[int, int]:
        return (self.t0, self.t1)

    @property
    def duration(self) -> int:
        return self.t1 - self.t0

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(*row)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.window == other.window
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"EventStream(n={len(self)}, geometry={self.width}x{self.height}, window=[{self.t0}, {self.t1}))"

    def to_array(self) -> np.ndarray:
        """Events as an (N, 4) int64 array of ``t, x, y, p``."""
        return np.stack([self.t, self.x.astype(np.int64), self.y.astype(np.int64), self.p.astype(np.int64)], axis=1)

    def pixel_index(self) -> np.ndarray:
        return self.y.astype(np.int64) * self.width + self.x

    def select(self, mask: np.ndarray) -> "EventStream":
        """Subset by boolean mask or sorted index array; order is preserved so no re-sort is needed."""
        return EventStream(self.t[mask], self.x[mask], self.y[mask], self.p[mask], *self.geometry, *self.window, check=False)

    def multiset_keys(self) -> np.ndarray:
        """Sorted scalar keys of all events, for multiset comparisons between streams of one geometry."""
        k = (self.t.astype(np.int64) * self.height + self.y) * self.width + self.x
        return np.sort(k * 2 + (self.p > 0))


def canonicalize(events, geometry: tuple[int, int], window: tuple[int, int]) -> EventStream:
    """Build a canonical stream from an unordered collection.

    ``events`` can be an iterable of ``(t, x, y, p)`` tuples, an ``(N, 4)``
    array, or an existing :class:`EventStream` (re-validated against the
    given geometry and window).
    """
    if isinstance(events, EventStream):
        t, x, y, p = events.t, events.x, events.y, events.p
    else:
        arr = np.asarray(list(events) if not isinstance(events, np.ndarray) else events, dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError("expected (N, 4) events")
        t, x, y, p = arr.T
    return EventStream.from_arrays(t, x, y, p, geometry, window)


def slice_window(stream: EventStream, a: int, b: int) -> EventStream:
    """Events with ``a <= t < b``; the result carries window ``[a, b)``."""
    if not (stream.t0 <= a < b <= stream.t1):
        raise InvalidRange(f"[{a}, {b}) not inside [{stream.t0}, {stream.t1})")
    i, j = np.searchsorted(stream.t, [a, b], side="left")
    return EventStream(
        stream.t[i:j], stream.x[i:j], stream.y[i:j], stream.p[i:j], stream.width, stream.height, a, b, check=False
    )


def split_windows(stream: EventStream, length: int, drop_partial: bool = True) -> list[EventStream]:
    """Consecutive slices of ``length`` microseconds starting at ``t0``."""
    if length <= 0:
        raise InvalidRange("slice length must be positive")
    out = []
    a = stream.t0
    while a < stream.t1:
        b = a + length
        if b > stream.t1:
            if drop_partial:
                break
            b = stream.t1
        out.append(slice_window(stream, a, b))
        a = b
    return out


def check_compatible(streams: Sequence[EventStream]) -> None:
    first = streams[0]
    for s in streams[1:]:
        if s.geometry != first.geometry:
            raise GeometryMismatch(f"{s.geometry} != {first.geometry}")
        if s.window != first.window:
            raise WindowMismatch(f"{s.window} != {first.window}")


def merge(streams: Sequence[EventStream]) -> EventStream:
    """Canonical multiset union of streams sharing geometry and window."""
    if not streams:
        raise ValueError("nothing to merge")
    check_compatible(streams)
    first = streams[0]
    parts = [s for s in streams if len(s)]
    if len(parts) <= 1:
        return parts[0] if parts else first
    t = np.concatenate([s.t for s in parts])
    x = np.concatenate([s.x for s in parts])
    y = np.concatenate([s.y for s in parts])
    p = np.concatenate([s.p for s in parts])
    order = _canonical_order(t, x, y, p, first.width, first.height, first.t0)
    return EventStream(t[order], x[order], y[order], p[order], *first.geometry, *first.window, check=False)


def concatenate(streams: Sequence[EventStream]) -> EventStream:
    """Join adjacent, non-overlapping slices back into one stream."""
    if not streams:
        raise ValueError("nothing to concatenate")
    streams = sorted(streams, key=lambda s: s.t0)
    for a, b in zip(streams, streams[1:]):
        if a.t1 != b.t0:
            raise InvalidRange("slices are not adjacent")
        if a.geometry != b.geometry:
            raise GeometryMismatch("slices differ in geometry")
    return EventStream(
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.p for s in streams]),
        *streams[0].geometry,
        streams[0].t0,
        streams[-1].t1,
        check=False,
    )


def is_submultiset(sub: EventStream, sup: EventStream) -> bool:
    """True if every event of ``sub`` appears in ``sup`` at least as often."""
    a = sub.multiset_keys()
    b = sup.multiset_keys()
    if len(a) > len(b):
        return False
    if not len(a):
        return True
    ua, ca = np.unique(a, return_counts=True)
    ub, cb = np.unique(b, return_counts=True)
    idx = np.minimum(np.searchsorted(ub, ua), len(ub) - 1)
    return bool(np.all(ub[idx] == ua) and np.all(cb[idx] >= ca))


# serialization ----------------------------------------------------------------------


def to_evt1_bytes(stream: EventStream) -> bytes:
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise InvalidRange("geometry does not fit EVT1 u16 fields")
    rec = np.zeros(len(stream), dtype=EVT1_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    header = EVT1_HEADER.pack(EVT1_MAGIC, EVT1_VERSION, stream.width, stream.height, stream.t0, stream.t1, len(stream))
    return header + rec.tobytes()


def from_evt1_bytes(data: bytes) -> EventStream:
    if len(data) < EVT1_HEADER.size:
        raise CorruptHeader("file shorter than the EVT1 header")
    magic, version, width, height, t0, t1, count = EVT1_HEADER.unpack_from(data, 0)
    if magic != EVT1_MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    if version != EVT1_VERSION:
        raise CorruptHeader(f"unsupported EVT1 version {version}")
    expected = EVT1_HEADER.size + count * EVT1_RECORD.itemsize
    if len(data) < expected:
        raise TruncatedRecord(f"expected {count} records, file holds {(len(data) - EVT1_HEADER.size) // EVT1_RECORD.itemsize}")
    if len(data) > expected:
        raise CorruptHeader("trailing bytes after the declared record count")
    rec = np.frombuffer(data, dtype=EVT1_RECORD, count=count, offset=EVT1_HEADER.size)
    if count and np.any(rec["t"] > np.iinfo(np.int64).max):
        raise OutOfWindow("timestamp exceeds int64")
    # from_arrays also accepts valid-but-unsorted files written by other tools
    return EventStream.from_arrays(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], (width, height), (t0, t1))


def _write_csv(stream: EventStream, fh) -> None:
    fh.write(CSV_HEADER + "\n")
    if len(stream):
        np.savetxt(fh, stream.to_array(), fmt="%d", delimiter=",")


def read_csv(path, geometry: tuple[int, int] | None = None, window: tuple[int, int] | None = None) -> EventStream:
    """Read a ``t_us,x,y,p`` CSV.  Missing geometry/window are inferred from the data."""
    with open(path, "r", encoding="ascii") as fh:
        first = fh.readline().strip()
        if first != CSV_HEADER:
            raise CorruptHeader(f"expected CSV header {CSV_HEADER!r}, got {first!r}")
        body = fh.read()
    if body.strip():
        arr = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
    else:
        arr = np.zeros((0, 4), dtype=np.int64)
    if arr.shape[1] != 4:
        raise TruncatedRecord("CSV rows must have 4 fields")
    if geometry is None:
        geometry = (int(arr[:, 1].max()) + 1, int(arr[:, 2].max()) + 1) if len(arr) else (1, 1)
    if window is None:
        window = (int(arr[:, 0].min()), int(arr[:, 0].max()) + 1) if len(arr) else (0, 1)
    return canonicalize(arr, geometry, window)


def write_events(stream: EventStream, path, format: str | None = None) -> None:
    """Write ``stream`` as EVT1 (default) or CSV (``format="csv"`` or a .csv suffix)."""
    fmt = (format or ("csv" if str(path).lower().endswith(".csv") else "evt1")).lower()
    if fmt == "evt1":
        data = to_evt1_bytes(stream)
        with open(path, "wb") as fh:
            fh.write(data)
    elif fmt == "csv":
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            _write_csv(stream, fh)
    else:
        raise ValueError(f"unknown event format {format!r}")


def read_events(path, geometry=None, window=None) -> EventStream:
    """Read an EVT1 or CSV file; the format is detected from the first bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == EVT1_MAGIC:
        return from_evt1_bytes(path.read_bytes())
    if head == CSV_HEADER[:4].encode():
        return read_csv(path, geometry, window)
    raise CorruptHeader(f"{os.fspath(path)}: neither EVT1 nor CSV")
