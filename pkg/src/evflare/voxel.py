"""Event <-> voxel coding by polarity accumulation over uniform time bins.

An event at time ``t`` falls into bin ``b = floor((t - t0) * B / (t1 - t0))``
(exact integer arithmetic).  Decoding rounds each cell to the nearest integer
``n`` (ties away from zero) and emits ``|n|`` events of polarity ``sign(n)``
at keyed-uniform integer times inside the bin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadBinCount, CorruptHeader, TruncatedRecord
from .events import EventStream
from .rng import keyed_uniform

VOX1_MAGIC = b"VOX1"
VOX1_HEADER = struct.Struct("<4sIIIQQ")  # magic, B, H, W, t0, t1
DEFAULT_BINS = 8


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    values: np.ndarray  # (B, H, W) float32
    t0: int
    t1: int

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.values.shape[2], self.values.shape[1])

    @property
    def window(self) -> tuple[int, int]:
        return (self.t0, self.t1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PolarityVoxelGrid:
    values: np.ndarray  # (2, B, H, W): channel 0 positive counts, channel 1 negative counts
    t0: int
    t1: int

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    def signed(self) -> VoxelGrid:
        return VoxelGrid(self.values[0] - self.values[1], self.t0, self.t1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolarityVoxelGrid):
            return NotImplemented
        return (self.t0, self.t1) == (other.t0, other.t1) and np.array_equal(self.values, other.values)

    __hash__ = None


def _check_bins(B) -> int:
    if isinstance(B, bool) or not isinstance(B, (int, np.integer)) or B < 1:
        raise BadBinCount(f"bin count must be an integer >= 1, got {B!r}")
    return int(B)


def bin_index(stream: EventStream, B: int) -> np.ndarray:
    return ((stream.t - stream.t0) * B) // stream.duration


def encode(stream: EventStream, B: int = DEFAULT_BINS) -> VoxelGrid:
    B = _check_bins(B)
    hw = stream.width * stream.height
    flat = bin_index(stream, B) * hw + stream.pixel_index()
    v = np.bincount(flat, weights=stream.p, minlength=B * hw)
    return VoxelGrid(v.reshape(B, stream.height, stream.width).astype(np.float32), stream.t0, stream.t1)


def encode_polarity(stream: EventStream, B: int = DEFAULT_BINS) -> PolarityVoxelGrid:
    B = _check_bins(B)
    hw = stream.width * stream.height
    flat = bin_index(stream, B) * hw + stream.pixel_index()
    flat = flat + (stream.p < 0) * (B * hw)
    v = np.bincount(flat, minlength=2 * B * hw)
    return PolarityVoxelGrid(v.reshape(2, B, stream.height, stream.width).astype(np.float32), stream.t0, stream.t1)


def round_half_away(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def bin_edges(t0: int, t1: int, B: int) -> np.ndarray:
    """Integer edges: bin ``b`` holds exactly the times ``edges[b] <= t < edges[b+1]``."""
    T = t1 - t0
    b = np.arange(B + 1, dtype=np.int64)
    return t0 - ((-b * T) // B)


def decode(grid: VoxelGrid, seed: int = 0) -> EventStream:
    B = grid.bins
    W, H = grid.geometry
    T = grid.t1 - grid.t0
    if T < B:
        raise BadBinCount(f"window of {T} us is shorter than {B} bins")
    n = round_half_away(grid.values).astype(np.int64).ravel()
    cells = np.nonzero(n)[0]
    if len(cells) == 0:
        return EventStream.empty((W, H), grid.window)
    counts = np.abs(n[cells])
    cell = np.repeat(cells, counts)
    ordinal = np.arange(len(cell)) - np.repeat(np.cumsum(counts) - counts, counts)
    pol = np.repeat(np.sign(n[cells]), counts)
    hw = W * H
    b = cell // hw
    pix = cell % hw
    edges = bin_edges(grid.t0, grid.t1, B)
    lo, hi = edges[b], edges[b + 1]
    u = keyed_uniform(seed, cell.astype(np.uint64), ordinal.astype(np.uint64))
    t = lo + np.minimum(np.floor(u * (hi - lo)).astype(np.int64), hi - lo - 1)
    return EventStream.from_arrays(t, pix % W, pix // W, pol, (W, H), grid.window)


def to_vox1_bytes(grid: VoxelGrid) -> bytes:
    B, H, W = grid.values.shape
    return VOX1_HEADER.pack(VOX1_MAGIC, B, H, W, grid.t0, grid.t1) + grid.values.astype("<f4").tobytes()


def from_vox1_bytes(data: bytes) -> VoxelGrid:
    if len(data) < VOX1_HEADER.size:
        raise CorruptHeader("file shorter than the VOX1 header")
    magic, B, H, W, t0, t1 = VOX1_HEADER.unpack_from(data, 0)
    if magic != VOX1_MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    if B < 1 or t1 <= t0:
        raise CorruptHeader("invalid VOX1 header fields")
    need = VOX1_HEADER.size + 4 * B * H * W
    if len(data) < need:
        raise TruncatedRecord("VOX1 payload shorter than declared")
    if len(data) > need:
        raise CorruptHeader("trailing bytes after VOX1 payload")
    v = np.frombuffer(data, dtype="<f4", count=B * H * W, offset=VOX1_HEADER.size).reshape(B, H, W)
    return VoxelGrid(v.astype(np.float32), t0, t1)


def write_voxels(grid: VoxelGrid, path) -> None:
    Path(path).write_bytes(to_vox1_bytes(grid))


def read_voxels(path) -> VoxelGrid:
    return from_vox1_bytes(Path(path).read_bytes())
