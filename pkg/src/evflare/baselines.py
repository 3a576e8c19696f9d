"""Reference restoration methods behind one interface.

``efr`` is a surrogate of an event-based periodic flicker filter, not the original
implementation.  Per pixel, an event after the warm-up period is a flicker
candidate when a surviving earlier event at the same pixel sits a multiple
``m`` of half the base period before it (within ``match_tolerance``), with
opposite polarity for odd ``m`` and equal polarity for even ``m``.  Candidates
are dropped with probability ``rho1``; only survivors are matched against, so
the filter feeds back on its own output like a comb.  Warm-up events are kept
and act as survivors.

``voxel`` encodes and decodes each 20 ms segment, i.e. a restoration network
whose residual output is zero.
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .errors import ConfigError, DataError, GeometryMismatch, MethodUnknown, WindowMismatch
from .events import EventStream, concatenate, from_evt1_bytes, slice_window, to_evt1_bytes
from .rng import derive_seed, keyed_uniform
from .voxel import DEFAULT_BINS, decode, encode


@dataclass(frozen=True)
class EFRConfig:
    base_freq: float = 50.0  # Hz
    rho1: float = 0.6
    warmup: int = 22_000  # us
    match_tolerance: float | None = None  # us; None -> period / 20
    harmonics: int = 8  # half-period multiples checked
    seed: int = 0

    def __post_init__(self):
        if not self.base_freq > 0:
            raise ConfigError("base_freq must be positive")
        if not 0 <= self.rho1 < 1:
            raise ConfigError("rho1 must lie in [0, 1)")
        if self.warmup < 0:
            raise ConfigError("warmup must be non-negative")
        if self.harmonics < 1:
            raise ConfigError("harmonics must be >= 1")
        if self.match_tolerance is not None and self.match_tolerance < 0:
            raise ConfigError("match_tolerance must be non-negative")

    @property
    def period(self) -> float:
        return 1e6 / self.base_freq

    @property
    def tolerance(self) -> float:
        return self.period / 20.0 if self.match_tolerance is None else float(self.match_tolerance)


@njit(cache=True)
def _efr_keep(t, p, starts, ends, warm_end, half, tol, kmax, u, rho1):
    n = t.shape[0]
    keep = np.ones(n, np.bool_)
    st = np.empty(n, np.int64)  # survivor times of the current pixel
    sp = np.empty(n, np.int8)
    horizon = kmax * half + tol
    for g in range(starts.shape[0]):
        m = 0
        for i in range(starts[g], ends[g]):
            ti = t[i]
            if ti >= warm_end:
                matched = False
                j = m - 1
                while j >= 0:
                    dt = ti - st[j]
                    if dt > horizon:
                        break
                    k = int(dt / half + 0.5)
                    if 1 <= k <= kmax and abs(dt - k * half) <= tol:
                        want = -p[i] if k % 2 == 1 else p[i]
                        if sp[j] == want:
                            matched = True
                            break
                    j -= 1
                if matched and u[i] < rho1:
                    keep[i] = False
                    continue
            st[m] = ti
            sp[m] = p[i]
            m += 1
    return keep


def efr_filter(stream: EventStream, config: EFRConfig | None = None) -> EventStream:
    config = config or EFRConfig()
    n = len(stream)
    if n == 0 or config.rho1 == 0:
        return stream
    pix = stream.pixel_index()
    order = np.argsort(pix, kind="stable")  # time order is kept inside each pixel
    ps = pix[order]
    cut = np.nonzero(np.diff(ps))[0] + 1
    starts = np.concatenate([[0], cut]).astype(np.int64)
    ends = np.concatenate([cut, [n]]).astype(np.int64)
    u = keyed_uniform(config.seed, np.arange(n, dtype=np.uint64))[order]
    keep_sorted = _efr_keep(
        stream.t[order],
        stream.p[order],
        starts,
        ends,
        stream.t0 + config.warmup,
        config.period / 2.0,
        config.tolerance,
        config.harmonics,
        u,
        config.rho1,
    )
    keep = np.empty(n, dtype=bool)
    keep[order] = keep_sorted
    return stream.select(keep)


def voxel_transform(
    stream: EventStream, bins: int = DEFAULT_BINS, segment: int = 20_000, seed: int = 0
) -> EventStream:
    """decode(encode(.)) per segment; a shorter tail segment is coded over its own window."""
    parts = []
    a, i = stream.t0, 0
    while a < stream.t1:
        b = min(a + segment, stream.t1)
        piece = slice_window(stream, a, b)
        if b - a >= bins:
            piece = decode(encode(piece, bins), derive_seed(seed, "voxel", i))
        parts.append(piece)  # tails shorter than one us per bin pass through
        a, i = b, i + 1
    return concatenate(parts)


def external_filter(stream: EventStream, command: list[str] | str, timeout: float | None = None) -> EventStream:
    """Pipe EVT1 through a user executable (stdin -> stdout)."""
    cmd = command if isinstance(command, list) else command.split()
    try:
        res = subprocess.run(cmd, input=to_evt1_bytes(stream), stdout=subprocess.PIPE, timeout=timeout, check=False)
    except OSError as exc:
        raise ConfigError(f"cannot run external method {cmd!r}: {exc}") from exc
    if res.returncode != 0:
        raise DataError(f"external method exited with status {res.returncode}")
    out = from_evt1_bytes(res.stdout)
    if out.geometry != stream.geometry:
        raise GeometryMismatch("external method changed the geometry")
    if not (stream.t0 <= out.t0 and out.t1 <= stream.t1):
        raise WindowMismatch("external method widened the window")
    return out


@dataclass(frozen=True)
class DeflareMethod:
    name: str
    transform: Callable[[EventStream], EventStream] = field(compare=False)

    def __call__(self, stream: EventStream) -> EventStream:
        return self.transform(stream)


METHODS = ("raw", "efr", "voxel", "external")


def get_method(name: str, options: dict | None = None) -> DeflareMethod:
    """Look up a method by name; ``options`` feeds its configuration."""
    opts = dict(options or {})
    if name == "raw":
        return DeflareMethod("raw", lambda s: s)
    if name == "efr":
        cfg = EFRConfig(**opts)
        return DeflareMethod("efr", lambda s: efr_filter(s, cfg))
    if name == "voxel":
        bins = int(opts.get("bins", DEFAULT_BINS))
        seed = int(opts.get("seed", 0))
        seg = int(opts.get("segment", 20_000))
        return DeflareMethod("voxel", lambda s: voxel_transform(s, bins, seg, seed))
    if name == "external":
        cmd = opts.get("command")
        if not cmd:
            raise ConfigError("external method needs a command")
        return DeflareMethod("external", lambda s: external_filter(s, cmd, opts.get("timeout")))
    raise MethodUnknown(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
