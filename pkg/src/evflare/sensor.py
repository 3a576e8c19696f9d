"""Contrast-threshold sensor model and its event-accumulation inverses.

Each pixel tracks a reference log-intensity ``L_ref``.  Between two frames
the log signal is assumed to move linearly; whenever it crosses
``L_ref + s*c`` an event of polarity ``s`` fires and the reference advances
by one threshold.  The sub-threshold residual is carried to the next gap, so
``|L - L_ref| < c`` holds at every frame time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadSamplePeriod, ConfigError, CorruptHeader, EmptyInput, NegativeIntensity, TruncatedRecord
from .events import EventStream
from .rng import generator

IFR1_MAGIC = b"IFR1"
IFR1_HEADER = struct.Struct("<4sIIIQQ")  # magic, W, H, frame_count, fps_millihz, t_start_us


@dataclass(frozen=True)
class SensorConfig:
    c: float = 0.2
    c_range: tuple[float, float] | None = None
    i_floor: float | None = None  # None -> 1e-6 x sequence maximum

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"contrast threshold must be positive, got {self.c}")
        if self.c_range is not None:
            lo, hi = self.c_range
            if not (0 < lo <= hi):
                raise ConfigError(f"bad contrast range {self.c_range}")
        if self.i_floor is not None and not self.i_floor > 0:
            raise ConfigError("i_floor must be positive")

    def contrast(self, seed: int = 0) -> float:
        """Threshold used for a given seed: fixed ``c`` or a draw from ``c_range``."""
        if self.c_range is None:
            return float(self.c)
        lo, hi = self.c_range
        return float(generator(seed, "contrast").uniform(lo, hi))

    def to_dict(self) -> dict:
        return {"c": self.c, "c_range": list(self.c_range) if self.c_range else None, "i_floor": self.i_floor}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorConfig":
        cr = d.get("c_range")
        return cls(c=d.get("c", 0.2), c_range=tuple(cr) if cr else None, i_floor=d.get("i_floor"))


@dataclass
class IntensityFrameSequence:
    """Uniformly sampled linear-intensity frames, shape (N, H, W).

    Frame ``k`` sits at integer time ``t_start + round(k * 1e6 / fps)`` us.
    ``anchors`` optionally records the light-source position per frame.
    """

    frames: np.ndarray
    fps: float
    t_start: int = 0
    anchors: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3:
            raise ValueError("frames must be (N, H, W)")
        self.frames = f
        if not (self.fps > 0) or self.fps > 1e6:
            raise ConfigError(f"fps must be in (0, 1e6], got {self.fps}")
        if f.size and (not np.all(np.isfinite(f)) or f.min() < 0):
            raise NegativeIntensity("frames must be finite and non-negative")
        self.t_start = int(self.t_start)

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.frames.shape[2], self.frames.shape[1])

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame_times(self) -> np.ndarray:
        k = np.arange(len(self), dtype=np.float64)
        return self.t_start + np.round(k * 1e6 / self.fps).astype(np.int64)

    def default_window(self) -> tuple[int, int]:
        ts = self.frame_times()
        return (self.t_start, int(ts[-1]) + 1)


def _check_frames(frames: IntensityFrameSequence) -> None:
    if len(frames) < 2:
        raise EmptyInput("need at least two frames")
    if frames.frames.min() < 0:
        raise NegativeIntensity("frames must be non-negative")


def log_frames(frames: IntensityFrameSequence, i_floor: float | None = None) -> np.ndarray:
    """Clamped log-intensity, float64 (N, H, W)."""
    return np.log(np.maximum(frames.frames.astype(np.float64), i_floor or default_floor(frames)))


class ThresholdSimulator:
    """Incremental form of :func:`simulate_events`: feed frames one at a time.

    Useful when a rendered sequence is too large to hold in memory.  The
    clamp ``i_floor`` must be given explicitly here.
    """

    def __init__(self, first_frame: np.ndarray, t_first: int, c: float, i_floor: float, window: tuple[int, int]):
        if not c > 0 or not i_floor > 0:
            raise ConfigError("c and i_floor must be positive")
        f = np.asarray(first_frame)
        if f.min() < 0:
            raise NegativeIntensity("frames must be non-negative")
        self.height, self.width = f.shape
        self.c = float(c)
        self.i_floor = float(i_floor)
        self.t0, self.t1 = window
        if t_first < self.t0:
            raise ConfigError("window starts after the first frame")
        self._L = np.log(np.maximum(f.astype(np.float64), self.i_floor)).ravel()
        self._t = int(t_first)
        self.L_ref = self._L.copy()
        self._parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def step(self, frame: np.ndarray, t: int) -> None:
        f = np.asarray(frame)
        if f.min() < 0:
            raise NegativeIntensity("frames must be non-negative")
        Ln = np.log(np.maximum(f.astype(np.float64), self.i_floor)).ravel()
        ta, tb = self._t, int(t)
        if tb <= ta:
            raise ConfigError("frame times must increase")
        Lp, L_ref, c = self._L, self.L_ref, self.c
        self._L, self._t = Ln, tb
        if ta >= self.t1:
            return
        d = Ln - L_ref
        n = np.floor(np.abs(d) / c).astype(np.int64)
        hit = np.nonzero(n)[0]
        if len(hit) == 0:
            return
        nh = n[hit]
        s = np.sign(d[hit])
        ref = L_ref[hit]
        L_ref[hit] = ref + nh * s * c

        pix = np.repeat(hit, nh)
        j = np.arange(len(pix)) - np.repeat(np.cumsum(nh) - nh, nh) + 1
        sp = np.repeat(s, nh)
        lp = Lp[pix]
        level = np.repeat(ref, nh) + sp * j * c
        den = Ln[pix] - lp
        # den == 0 only when rounding left the residual at exactly one threshold
        frac = np.divide(level - lp, den, out=np.ones_like(den), where=den != 0)
        te = ta + np.ceil(frac * (tb - ta))
        # strictly between frame times, so a frame time never carries events of two gaps
        te = np.clip(te, ta + 1, max(tb - 1, ta + 1)).astype(np.int64)
        keep = te < self.t1
        self._parts.append((te[keep], pix[keep], sp[keep].astype(np.int8)))

    def result(self) -> EventStream:
        geometry = (self.width, self.height)
        if not self._parts:
            return EventStream.empty(geometry, (self.t0, self.t1))
        t = np.concatenate([q[0] for q in self._parts])
        pix = np.concatenate([q[1] for q in self._parts])
        p = np.concatenate([q[2] for q in self._parts])
        return EventStream.from_arrays(t, pix % self.width, pix // self.width, p, geometry, (self.t0, self.t1))


def default_floor(frames: IntensityFrameSequence) -> float:
    m = float(frames.frames.max()) if frames.frames.size else 0.0
    return 1e-6 * m if m > 0 else 1e-6


def simulate_events(
    frames: IntensityFrameSequence,
    config: SensorConfig | None = None,
    seed: int = 0,
    window: tuple[int, int] | None = None,
) -> EventStream:
    """Run the threshold model over all frame gaps.

    Events of gap ``(t_k, t_k+1)`` get timestamps at the (ceil-rounded)
    crossing instant of linearly interpolated log intensity, clipped into the
    open gap (the closed one when frames are 1 us apart).  So every event of
    a gap is counted both at the frame time that ends it and by any
    half-open accumulation window ending there.  Events at or past the
    window end are dropped.
    """
    config = config or SensorConfig()
    _check_frames(frames)
    times = frames.frame_times()
    sim = ThresholdSimulator(
        frames.frames[0],
        int(times[0]),
        config.contrast(seed),
        config.i_floor or default_floor(frames),
        window or frames.default_window(),
    )
    for k in range(1, len(frames)):
        if times[k - 1] >= sim.t1:
            break
        sim.step(frames.frames[k], int(times[k]))
    return sim.result()


class LogIntensityReconstruction:
    """Piecewise-constant per-pixel ``L(t) = L0 + c * (signed count of events with t_e <= t)``."""

    def __init__(self, stream: EventStream, L0, c: float):
        self.stream = stream
        self.c = float(c)
        self.L0 = np.broadcast_to(np.asarray(L0, dtype=np.float64), (stream.height, stream.width))

    def signed_counts(self, t: int) -> np.ndarray:
        s = self.stream
        j = np.searchsorted(s.t, t, side="right")
        cnt = np.bincount(s.pixel_index()[:j], weights=s.p[:j], minlength=s.width * s.height)
        return cnt.reshape(s.height, s.width)

    def at(self, t: int) -> np.ndarray:
        """Full (H, W) log-intensity raster at time ``t``."""
        return self.L0 + self.c * self.signed_counts(t)

    def at_pixel(self, t, x: int, y: int):
        s = self.stream
        sel = (s.x == x) & (s.y == y)
        te, pe = s.t[sel], s.p[sel].astype(np.int64)
        cum = np.concatenate([[0], np.cumsum(pe)])
        return self.L0[y, x] + self.c * cum[np.searchsorted(te, np.asarray(t), side="right")]


def reconstruct_log_intensity(stream: EventStream, L0, c: float) -> LogIntensityReconstruction:
    return LogIntensityReconstruction(stream, L0, c)


# intensity profiles -------------------------------------------------------------------


class IntensityProfile:
    """Per-pixel linear intensity sampled every ``dt`` us from ``t0``; zero-order hold between samples."""

    width: int
    height: int
    t0: int
    dt: int
    count: int

    @property
    def geometry(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def t1(self) -> int:
        return self.t0 + self.dt * self.count

    def covers(self, window: tuple[int, int]) -> bool:
        return self.t0 <= window[0] and window[1] <= self.t1

    def bin_of(self, t) -> np.ndarray:
        b = (np.asarray(t, dtype=np.int64) - self.t0) // self.dt
        return np.clip(b, 0, self.count - 1)

    def at(self, t, x, y) -> np.ndarray:
        raise NotImplementedError

    def samples(self) -> np.ndarray:
        """Dense (count, H, W) float array."""
        raise NotImplementedError

    def scaled(self, factor: float) -> "IntensityProfile":
        return ScaledProfile(self, factor)


class SampledProfile(IntensityProfile):
    def __init__(self, samples, dt: int, t0: int = 0):
        s = np.asarray(samples)
        if s.ndim != 3:
            raise ValueError("samples must be (K, H, W)")
        if s.size and s.min() < 0:
            raise NegativeIntensity("profile samples must be non-negative")
        if dt <= 0:
            raise BadSamplePeriod("dt must be positive")
        self._s = s
        self.count, self.height, self.width = s.shape
        self.dt = int(dt)
        self.t0 = int(t0)

    @classmethod
    def constant(cls, value: float, geometry, window, dt: int | None = None) -> "SampledProfile":
        t0, t1 = window
        dt = dt or (t1 - t0)
        if (t1 - t0) % dt:
            raise BadSamplePeriod(f"dt={dt} does not divide window length {t1 - t0}")
        w, h = geometry
        return cls(np.broadcast_to(np.float64(value), ((t1 - t0) // dt, h, w)), dt, t0)

    def at(self, t, x, y) -> np.ndarray:
        if self._s.size and not any(self._s.strides):
            return np.full(np.shape(t), float(self._s.flat[0]))
        return np.asarray(self._s[self.bin_of(t), np.asarray(y), np.asarray(x)], dtype=np.float64)

    def samples(self) -> np.ndarray:
        return np.array(self._s, dtype=np.float64)


class ScaledProfile(IntensityProfile):
    def __init__(self, base: IntensityProfile, factor: float):
        if factor < 0:
            raise NegativeIntensity("scale factor must be non-negative")
        self.base = base
        self.factor = float(factor)
        self.width, self.height, self.t0, self.dt, self.count = base.width, base.height, base.t0, base.dt, base.count

    def at(self, t, x, y):
        return self.base.at(t, x, y) * self.factor

    def samples(self):
        return self.base.samples() * self.factor


class AccumulatedProfile(IntensityProfile):
    """``I(k) = I0 * exp(c * signed event count in [t0, t0 + k*dt))``, evaluated lazily."""

    def __init__(self, stream: EventStream, dt: int, c: float, I0=1.0):
        if dt <= 0 or stream.duration % dt:
            raise BadSamplePeriod(f"dt={dt} does not divide window length {stream.duration}")
        I0 = np.asarray(I0, dtype=np.float64)
        if I0.ndim not in (0, 2) or (I0.ndim == 2 and I0.shape != (stream.height, stream.width)):
            raise ValueError("I0 must be a scalar or an (H, W) raster")
        if np.any(I0 <= 0):
            raise NegativeIntensity("baseline intensity must be positive")
        self.stream = stream
        self.c = float(c)
        self.I0 = I0
        self.width, self.height = stream.geometry
        self.t0 = stream.t0
        self.dt = int(dt)
        self.count = stream.duration // self.dt
        # per (pixel, bin) signed sums, sorted by key, with a global prefix sum
        key = stream.pixel_index() * self.count + (stream.t - self.t0) // self.dt
        order = np.argsort(key, kind="stable")
        ks = key[order]
        if len(ks):
            starts = np.concatenate([[0], np.nonzero(np.diff(ks))[0] + 1])
            self._keys = ks[starts]
            sums = np.add.reduceat(stream.p[order].astype(np.int64), starts)
        else:
            self._keys = np.zeros(0, dtype=np.int64)
            sums = np.zeros(0, dtype=np.int64)
        self._prefix = np.concatenate([[0], np.cumsum(sums)])

    def counts_before(self, t, x, y) -> np.ndarray:
        """Signed count at each pixel over ``[t0, start of the bin containing t)``."""
        pix = np.asarray(y, dtype=np.int64) * self.width + np.asarray(x, dtype=np.int64)
        base = pix * self.count
        hi = np.searchsorted(self._keys, base + self.bin_of(t), side="left")
        lo = np.searchsorted(self._keys, base, side="left")
        return self._prefix[hi] - self._prefix[lo]

    def at(self, t, x, y) -> np.ndarray:
        i0 = self.I0 if self.I0.ndim == 0 else self.I0[np.asarray(y), np.asarray(x)]
        return i0 * np.exp(self.c * self.counts_before(t, x, y))

    def samples(self) -> np.ndarray:
        s = self.stream
        hw = self.width * self.height
        b = (s.t - self.t0) // self.dt
        per_bin = np.bincount(b * hw + s.pixel_index(), weights=s.p, minlength=self.count * hw)
        per_bin = per_bin.reshape(self.count, self.height, self.width)
        cum = np.cumsum(per_bin, axis=0) - per_bin
        return self.I0 * np.exp(self.c * cum)


def estimate_intensity_profile(stream: EventStream, dt: int = 1000, c: float = 0.2, I0=1.0) -> AccumulatedProfile:
    return AccumulatedProfile(stream, dt, c, I0)


# IFR1 I/O ------------------------------------------------------------------------------


def to_ifr1_bytes(seq: IntensityFrameSequence) -> bytes:
    n, h, w = seq.frames.shape
    header = IFR1_HEADER.pack(IFR1_MAGIC, w, h, n, int(round(seq.fps * 1000)), seq.t_start)
    return header + seq.frames.astype("<f4").tobytes()


def from_ifr1_bytes(data: bytes) -> IntensityFrameSequence:
    if len(data) < IFR1_HEADER.size:
        raise CorruptHeader("file shorter than the IFR1 header")
    magic, w, h, n, mhz, t_start = IFR1_HEADER.unpack_from(data, 0)
    if magic != IFR1_MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    need = IFR1_HEADER.size + 4 * n * h * w
    if len(data) < need:
        raise TruncatedRecord("IFR1 payload shorter than declared")
    if len(data) > need:
        raise CorruptHeader("trailing bytes after IFR1 payload")
    if mhz == 0:
        raise CorruptHeader("fps is zero")
    frames = np.frombuffer(data, dtype="<f4", count=n * h * w, offset=IFR1_HEADER.size).reshape(n, h, w)
    return IntensityFrameSequence(frames.astype(np.float32), mhz / 1000.0, t_start)


def write_frames(seq: IntensityFrameSequence, path) -> None:
    Path(path).write_bytes(to_ifr1_bytes(seq))


def read_frames(path, fps: float | None = None, t_start: int = 0) -> IntensityFrameSequence:
    """Read an IFR1 file, or a directory of PGM/PNG frames (sorted by name; ``fps`` required)."""
    from .images import load_linear_image

    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".pgm", ".tif", ".tiff"))
        if not files:
            raise EmptyInput(f"no frames in {path}")
        if fps is None:
            raise ConfigError("fps is required for frame directories")
        return IntensityFrameSequence(np.stack([load_linear_image(f) for f in files]), fps, t_start)
    return from_ifr1_bytes(path.read_bytes())


def profile_to_frames(profile: IntensityProfile) -> IntensityFrameSequence:
    """Dense profile as a frame sequence (one frame per sample), for IFR1 export."""
    return IntensityFrameSequence(profile.samples().astype(np.float32), 1e6 / profile.dt, profile.t0)
