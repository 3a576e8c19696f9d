"""Post-processing for recorded flare/reference pairs.

Temporal alignment by cross-correlating per-bin polarity ratios, spatial
masking of the reference, background-noise injection, and geometric
helpers (translation, centre crop).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from .errors import BadMask, ConfigError, InsufficientOverlap
from .events import EventStream, merge, split_windows
from .rng import generator


# alignment -------------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentResult:
    offset: int  # us; obs(t) ~ ref(t - offset)
    score: float  # Pearson correlation at the chosen offset
    z: float  # Fisher z statistic of the score
    confident: bool
    overlap_bins: int


def polarity_ratio(stream: EventStream, bin_us: int, t_start: int, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin ``N+ / (N+ + N-)`` on the grid ``t_start + k * bin_us``; empty bins give 0.5.

    Also returns the mask of bins lying fully inside the stream window.
    """
    k = (stream.t - t_start) // bin_us
    ok = (k >= 0) & (k < n_bins)
    pos = np.bincount(k[ok], weights=(stream.p[ok] > 0), minlength=n_bins)
    tot = np.bincount(k[ok], minlength=n_bins).astype(np.float64)
    r = np.where(tot > 0, pos / np.maximum(tot, 1), 0.5)
    edges = t_start + np.arange(n_bins) * bin_us
    inside = (edges >= stream.t0) & (edges + bin_us <= stream.t1)
    return r, inside


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0:
        return float("nan")
    return float((a * b).sum() / den)


def align_streams(
    obs: EventStream,
    ref: EventStream,
    bin_us: int = 1000,
    max_offset: int = 50_000,
    min_overlap: int = 20,
    alpha: float = 0.01,
) -> AlignmentResult:
    """Offset in ``[-max_offset, max_offset]`` (multiples of ``bin_us``) maximizing the correlation.

    Ties go to the smallest ``|offset|``.  ``confident`` is a one-sided
    Bonferroni test of the Fisher-z score at level ``alpha`` over all tried
    lags, so unrelated streams are flagged unconfident.
    """
    if bin_us <= 0 or max_offset < 0:
        raise ConfigError("bin must be positive and max_offset non-negative")
    lo = min(obs.t0, ref.t0)
    hi = max(obs.t1, ref.t1)
    if min(obs.t1, ref.t1) <= max(obs.t0, ref.t0):
        raise InsufficientOverlap("stream windows do not overlap")
    n = -(-(hi - lo) // bin_us)
    ro, io = polarity_ratio(obs, bin_us, lo, n)
    rr, ir = polarity_ratio(ref, bin_us, lo, n)
    M = max_offset // bin_us
    best = None
    for lag in sorted(range(-M, M + 1), key=lambda v: (abs(v), v)):
        # obs bin i pairs with ref bin i - lag
        i0 = max(0, lag)
        i1 = min(n, n + lag)
        if i1 - i0 <= 0:
            continue
        a = ro[i0:i1]
        b = rr[i0 - lag : i1 - lag]
        m = io[i0:i1] & ir[i0 - lag : i1 - lag]
        cnt = int(m.sum())
        if cnt < max(min_overlap, 4):
            continue
        score = _pearson(a[m], b[m])
        if np.isnan(score):
            continue
        if best is None or score > best[1]:
            best = (lag, score, cnt)
    if best is None:
        raise InsufficientOverlap("no lag has enough informative overlapping bins")
    lag, score, cnt = best
    z = float(np.arctanh(min(score, 1 - 1e-12)) * np.sqrt(max(cnt - 3, 1)))
    crit = float(_normal.isf(alpha / (2 * M + 1)))
    return AlignmentResult(int(lag * bin_us), score, z, bool(z > crit), cnt)


def shift_time(stream: EventStream, offset: int) -> EventStream:
    """Move events by ``offset`` us inside the same window; events pushed outside are dropped."""
    t = stream.t + offset
    keep = (t >= stream.t0) & (t < stream.t1)
    return EventStream(t[keep], stream.x[keep], stream.y[keep], stream.p[keep], *stream.geometry, *stream.window, check=False)


# noise -------------------------------------------------------------------------------------


def inject_background_noise(stream: EventStream, rate: float, seed: int = 0) -> EventStream:
    """Add homogeneous Poisson events (``rate`` per pixel per second, random polarity)."""
    if rate < 0:
        raise ConfigError("noise rate must be non-negative")
    if rate == 0:
        return stream
    rng = generator(seed, "noise")
    W, H = stream.geometry
    n = int(rng.poisson(rate * W * H * stream.duration / 1e6))
    if n == 0:
        return stream
    noise = EventStream.from_arrays(
        rng.integers(stream.t0, stream.t1, n),
        rng.integers(0, W, n),
        rng.integers(0, H, n),
        rng.choice(np.array([-1, 1]), n),
        stream.geometry,
        stream.window,
    )
    return merge([stream, noise])


def estimate_noise_rate(stream: EventStream, region: tuple[int, int, int, int]) -> float:
    """Events per pixel per second inside a quiet rectangle ``(x0, y0, x1, y1)`` (half-open)."""
    x0, y0, x1, y1 = region
    if not (0 <= x0 < x1 <= stream.width and 0 <= y0 < y1 <= stream.height):
        raise BadMask(f"region {region} outside geometry {stream.geometry}")
    inside = (stream.x >= x0) & (stream.x < x1) & (stream.y >= y0) & (stream.y < y1)
    return float(inside.sum()) / ((x1 - x0) * (y1 - y0) * stream.duration / 1e6)


# masks -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Mask:
    rects: tuple[tuple[int, int, int, int], ...] = ()  # (x0, y0, x1, y1), half-open
    discs: tuple[tuple[float, float, float], ...] = ()  # (cx, cy, radius)
    raster: np.ndarray | None = field(default=None, compare=False)  # (H, W) bool

    def is_empty(self) -> bool:
        return not self.rects and not self.discs and (self.raster is None or not self.raster.any())

    def validate(self, geometry: tuple[int, int]) -> None:
        W, H = geometry
        for r in self.rects:
            x0, y0, x1, y1 = r
            if not (0 <= x0 <= x1 <= W and 0 <= y0 <= y1 <= H):
                raise BadMask(f"rectangle {r} outside {W}x{H}")
        for d in self.discs:
            cx, cy, rad = d
            if not (0 <= cx < W and 0 <= cy < H) or rad < 0:
                raise BadMask(f"disc {d} must be centred inside {W}x{H} with radius >= 0")
        if self.raster is not None and np.shape(self.raster) != (H, W):
            raise BadMask(f"raster mask shape {np.shape(self.raster)} != {(H, W)}")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        y = np.asarray(y)
        inside = np.zeros(x.shape, dtype=bool)
        for x0, y0, x1, y1 in self.rects:
            inside |= (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
        for cx, cy, rad in self.discs:
            inside |= (x - cx) ** 2 + (y - cy) ** 2 <= rad * rad
        if self.raster is not None:
            inside |= np.asarray(self.raster, dtype=bool)[y, x]
        return inside

    @classmethod
    def around_light(cls, positions, radius: float) -> "Mask":
        """Discs of ``radius`` around each known light position."""
        return cls(discs=tuple((float(x), float(y), float(radius)) for x, y in positions))

    def to_dict(self) -> dict:
        return {"rects": [list(r) for r in self.rects], "discs": [list(d) for d in self.discs]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mask":
        return cls(
            rects=tuple(tuple(int(v) for v in r) for r in d.get("rects", [])),
            discs=tuple(tuple(float(v) for v in c) for c in d.get("discs", [])),
        )


def mask_region(stream: EventStream, mask: Mask, mode: str = "remove") -> EventStream:
    """``remove`` drops events inside the mask; ``keep`` drops events outside it."""
    if mode not in ("remove", "keep"):
        raise BadMask(f"mode must be 'remove' or 'keep', got {mode!r}")
    mask.validate(stream.geometry)
    inside = mask.contains(stream.x, stream.y)
    return stream.select(~inside if mode == "remove" else inside)


# geometry ------------------------------------------------------------------------------------


def translate(stream: EventStream, dx: int, dy: int) -> EventStream:
    """Shift coordinates by whole pixels; events leaving the sensor are dropped."""
    x = stream.x.astype(np.int64) + dx
    y = stream.y.astype(np.int64) + dy
    keep = (x >= 0) & (x < stream.width) & (y >= 0) & (y < stream.height)
    return EventStream.from_arrays(stream.t[keep], x[keep], y[keep], stream.p[keep], stream.geometry, stream.window)


def center_crop(stream: EventStream, size: tuple[int, int] = (640, 480)) -> EventStream:
    W, H = size
    if W > stream.width or H > stream.height or W <= 0 or H <= 0:
        raise ConfigError(f"crop {W}x{H} does not fit {stream.width}x{stream.height}")
    x0 = (stream.width - W) // 2
    y0 = (stream.height - H) // 2
    keep = (stream.x >= x0) & (stream.x < x0 + W) & (stream.y >= y0) & (stream.y < y0 + H)
    # order is unchanged: a constant shift preserves (y, x) ordering
    return EventStream(
        stream.t[keep], stream.x[keep] - x0, stream.y[keep] - y0, stream.p[keep], W, H, *stream.window, check=False
    )


def slice_pieces(stream: EventStream, length: int = 100_000) -> list[EventStream]:
    """Fixed-length pieces (100 ms by default); a partial tail is dropped."""
    return split_windows(stream, length, drop_partial=True)
