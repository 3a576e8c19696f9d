"""Dynamic flare rendering driven by a deterministic parameter script.

A :class:`FlareScript` holds every random choice for one sequence: a straight
trajectory, start/end affine parameters (linearly interpolated), a flicker
waveform and the reflective-ghost parameters.  Rendering the flare and the
clean light source from the same script makes their dynamics identical.

Asset placement for normalized time ``s`` in [0, 1]::

    canvas_point = P(s) + T(s) + M(s) @ (asset_point - anchor)
    M(s) = R(rotation) @ Shear(shear) * scale

The reflective component is a parametric model: Gaussian ghosts placed at
``center + g_j * (light - center)`` and an N-lobe starburst at the light.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

from .errors import AssetMissing, BadBounds, DegenerateScript
from .images import load_linear_image
from .rng import generator
from .sensor import IntensityFrameSequence

WAVEFORMS = ("sine", "square", "triangle")
MAX_FPS = 6000.0


# script ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    start: tuple[float, float]
    direction: float  # degrees, image coordinates (y down)
    distance: float  # px

    def position(self, s: float) -> tuple[float, float]:
        a = math.radians(self.direction)
        return (self.start[0] + self.distance * s * math.cos(a), self.start[1] + self.distance * s * math.sin(a))


@dataclass(frozen=True)
class AffineParams:
    rotation: float = 0.0  # degrees
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)  # fraction of canvas (W, H)
    shear: float = 0.0  # degrees

    @staticmethod
    def lerp(a: "AffineParams", b: "AffineParams", s: float) -> "AffineParams":
        # rotation follows the shorter arc
        dr = (b.rotation - a.rotation + 180.0) % 360.0 - 180.0
        return AffineParams(
            rotation=(a.rotation + s * dr) % 360.0,
            scale=a.scale + s * (b.scale - a.scale),
            translation=tuple(ta + s * (tb - ta) for ta, tb in zip(a.translation, b.translation)),
            shear=a.shear + s * (b.shear - a.shear),
        )


@dataclass(frozen=True)
class Flicker:
    enabled: bool = False
    freq: float = 120.0
    waveform: str = "sine"


@dataclass(frozen=True)
class ReflectiveParams:
    enabled: bool = False
    factors: tuple[float, ...] = ()
    sigmas: tuple[float, ...] = ()  # px
    gain: float = 0.1
    lobes: int = 6
    burst_gain: float = 0.0
    burst_radius: float = 20.0  # px
    burst_angle: float = 0.0  # degrees at t = 0
    burst_spin: float = 0.0  # degrees per second

    def amplitudes(self) -> np.ndarray:
        g = np.abs(np.asarray(self.factors, dtype=np.float64))
        return self.gain / (1.0 + g) ** 2


@dataclass(frozen=True)
class FlareScript:
    seed: int
    duration: int  # us
    fps: float
    trajectory: Trajectory
    affine_start: AffineParams = AffineParams()
    affine_end: AffineParams = AffineParams()
    flicker: Flicker = Flicker()
    reflective: ReflectiveParams = ReflectiveParams()

    def frame_count(self) -> int:
        if self.duration <= 0 or not self.fps > 0:
            return 0
        return int(math.ceil(self.duration * self.fps / 1e6 - 1e-9)) + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FlareScript":
        tr = d["trajectory"]
        rf = dict(d.get("reflective", {}))
        for key in ("factors", "sigmas"):
            if key in rf:
                rf[key] = tuple(rf[key])

        def aff(a):
            a = dict(a)
            a["translation"] = tuple(a.get("translation", (0.0, 0.0)))
            return AffineParams(**a)

        return cls(
            seed=int(d["seed"]),
            duration=int(d["duration"]),
            fps=float(d["fps"]),
            trajectory=Trajectory(tuple(tr["start"]), tr["direction"], tr["distance"]),
            affine_start=aff(d.get("affine_start", {})),
            affine_end=aff(d.get("affine_end", {})),
            flicker=Flicker(**d.get("flicker", {})),
            reflective=ReflectiveParams(**rf),
        )

    @classmethod
    def from_json(cls, text: str) -> "FlareScript":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ScriptRanges:
    start_margin: float = 0.1  # start position kept this fraction away from canvas edges
    direction: tuple[float, float] = (0.0, 360.0)
    distance: tuple[float, float] = (0.0, 180.0)
    rotation: tuple[float, float] = (0.0, 360.0)
    scale: tuple[float, float] = (0.8, 1.5)
    translation: tuple[float, float] = (-0.2, 0.2)
    shear: tuple[float, float] = (-20.0, 20.0)
    flicker_prob: float = 0.7
    freq: tuple[float, float] = (100.0, 140.0)
    waveforms: tuple[str, ...] = WAVEFORMS
    reflective_prob: float = 0.9
    fps: tuple[float, float] = (1000.0, 6000.0)
    ghosts: tuple[int, int] = (3, 6)
    ghost_factor: tuple[float, float] = (-1.5, 1.2)
    ghost_sigma: tuple[float, float] = (4.0, 30.0)
    ghost_gain: tuple[float, float] = (0.05, 0.3)
    lobes: tuple[int, int] = (4, 10)
    burst_gain: tuple[float, float] = (0.0, 0.5)
    burst_radius: tuple[float, float] = (10.0, 40.0)
    burst_spin: tuple[float, float] = (-90.0, 90.0)

    def validate(self) -> None:
        pairs = {
            "direction": self.direction,
            "distance": self.distance,
            "rotation": self.rotation,
            "scale": self.scale,
            "translation": self.translation,
            "shear": self.shear,
            "freq": self.freq,
            "fps": self.fps,
            "ghosts": self.ghosts,
            "ghost_factor": self.ghost_factor,
            "ghost_sigma": self.ghost_sigma,
            "ghost_gain": self.ghost_gain,
            "lobes": self.lobes,
            "burst_gain": self.burst_gain,
            "burst_radius": self.burst_radius,
            "burst_spin": self.burst_spin,
        }
        for name, (lo, hi) in pairs.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise BadBounds(f"{name}: need lo <= hi, got ({lo}, {hi})")
        if self.distance[0] < 0:
            raise BadBounds("distance must be non-negative")
        if self.scale[0] <= 0:
            raise BadBounds("scale must be positive")
        if self.freq[0] <= 0:
            raise BadBounds("flicker frequency must be positive")
        if self.fps[0] <= 0 or self.fps[1] > MAX_FPS:
            raise BadBounds(f"fps must lie in (0, {MAX_FPS:g}]")
        if abs(self.shear[0]) >= 90 or abs(self.shear[1]) >= 90:
            raise BadBounds("shear must stay inside (-90, 90) degrees")
        if self.ghosts[0] < 0 or self.ghost_sigma[0] <= 0 or self.lobes[0] < 1 or self.burst_radius[0] <= 0:
            raise BadBounds("ghost parameters out of range")
        if not (0 <= self.flicker_prob <= 1 and 0 <= self.reflective_prob <= 1):
            raise BadBounds("probabilities must lie in [0, 1]")
        if not (0 <= self.start_margin < 0.5):
            raise BadBounds("start_margin must lie in [0, 0.5)")
        if not self.waveforms or any(w not in WAVEFORMS for w in self.waveforms):
            raise BadBounds(f"waveforms must be a non-empty subset of {WAVEFORMS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptRanges":
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


def _uniform(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def sample_script(
    seed: int,
    ranges: ScriptRanges | None = None,
    duration: int = 100_000,
    canvas: tuple[int, int] = (640, 480),
) -> FlareScript:
    """Draw a script; every field is a function of ``seed`` alone."""
    ranges = ranges or ScriptRanges()
    ranges.validate()
    if duration <= 0:
        raise BadBounds("duration must be positive")
    rng = generator(seed, "script")
    W, H = canvas
    m = ranges.start_margin
    start = (float(rng.uniform(m, 1 - m) * (W - 1)), float(rng.uniform(m, 1 - m) * (H - 1)))
    traj = Trajectory(start, _uniform(rng, ranges.direction), _uniform(rng, ranges.distance))

    def affine():
        return AffineParams(
            rotation=_uniform(rng, ranges.rotation),
            scale=_uniform(rng, ranges.scale),
            translation=(_uniform(rng, ranges.translation), _uniform(rng, ranges.translation)),
            shear=_uniform(rng, ranges.shear),
        )

    a0 = affine()
    a1 = affine()
    flick = Flicker(
        enabled=bool(rng.random() < ranges.flicker_prob),
        freq=_uniform(rng, ranges.freq),
        waveform=ranges.waveforms[int(rng.integers(len(ranges.waveforms)))],
    )
    k = int(rng.integers(ranges.ghosts[0], ranges.ghosts[1] + 1))
    lo, hi = ranges.ghost_factor
    factors = [_uniform(rng, ranges.ghost_factor) for _ in range(k)]
    if k and lo < 0:
        factors[0] = _uniform(rng, (lo, min(hi, 0.0)))  # keep one ghost across the optical center
    refl = ReflectiveParams(
        enabled=bool(rng.random() < ranges.reflective_prob),
        factors=tuple(factors),
        sigmas=tuple(_uniform(rng, ranges.ghost_sigma) for _ in range(k)),
        gain=_uniform(rng, ranges.ghost_gain),
        lobes=int(rng.integers(ranges.lobes[0], ranges.lobes[1] + 1)),
        burst_gain=_uniform(rng, ranges.burst_gain),
        burst_radius=_uniform(rng, ranges.burst_radius),
        burst_angle=float(rng.uniform(0, 360)),
        burst_spin=_uniform(rng, ranges.burst_spin),
    )
    fps = float(round(_uniform(rng, ranges.fps)))
    fps = min(max(fps, ranges.fps[0]), ranges.fps[1])
    return FlareScript(int(seed), int(duration), fps, traj, a0, a1, flick, refl)


# flicker -------------------------------------------------------------------------------


def wave(waveform: str, cycles) -> np.ndarray:
    """Unit-amplitude periodic wave in [-1, 1] of the phase measured in cycles."""
    frac = np.mod(np.asarray(cycles, dtype=np.float64), 1.0)
    if waveform == "sine":
        return np.sin(2 * np.pi * frac)
    if waveform == "square":
        return np.where(frac < 0.5, 1.0, -1.0)
    if waveform == "triangle":
        # same phase as the sine: 0 -> 1 -> 0 -> -1 -> 0
        return np.where(frac < 0.25, 4 * frac, np.where(frac < 0.75, 2 - 4 * frac, 4 * frac - 4))
    raise ValueError(f"unknown waveform {waveform!r}")


def flicker_multiplier(waveform: str, freq: float, t) -> np.ndarray:
    """``0.5 + 0.5 * wave(2 pi f t)`` for ``t`` in microseconds."""
    if not freq > 0:
        raise ValueError("flicker frequency must be positive")
    cycles = np.asarray(t, dtype=np.float64) * (freq / 1e6)
    out = 0.5 + 0.5 * wave(waveform, cycles)
    return float(out) if np.ndim(out) == 0 else out


# assets --------------------------------------------------------------------------------


def intensity_centroid(img: np.ndarray) -> tuple[float, float]:
    img = np.asarray(img, dtype=np.float64)
    total = img.sum()
    if total <= 0:
        return ((img.shape[1] - 1) / 2.0, (img.shape[0] - 1) / 2.0)
    ys, xs = np.indices(img.shape)
    return (float((xs * img).sum() / total), float((ys * img).sum() / total))


@dataclass
class FlareAssetPair:
    flare_image: np.ndarray
    light_image: np.ndarray
    anchor: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        self.flare_image = np.asarray(self.flare_image, dtype=np.float32)
        self.light_image = np.asarray(self.light_image, dtype=np.float32)
        if self.flare_image.shape != self.light_image.shape or self.flare_image.ndim != 2:
            raise ValueError("flare and light rasters must be 2-D with one shape")
        if self.flare_image.min() < 0 or self.light_image.min() < 0:
            raise ValueError("asset rasters must be non-negative")
        if self.anchor is None:
            self.anchor = intensity_centroid(self.light_image)
        self.anchor = (float(self.anchor[0]), float(self.anchor[1]))


def load_asset_pair(flare_path, light_path, name: str | None = None) -> FlareAssetPair:
    flare = load_linear_image(flare_path)
    light = load_linear_image(light_path)
    if flare.shape != light.shape:
        raise AssetMissing(f"asset shapes differ: {flare_path} {flare.shape} vs {light_path} {light.shape}")
    return FlareAssetPair(flare, light, None, name or Path(flare_path).stem)


def list_asset_pairs(asset_dir) -> list[tuple[Path, Path]]:
    """``asset_dir/flare/<name>`` paired with ``asset_dir/light/<name>``, sorted by name."""
    root = Path(asset_dir)
    fdir, ldir = root / "flare", root / "light"
    if not fdir.is_dir() or not ldir.is_dir():
        raise AssetMissing(f"{root} needs flare/ and light/ subdirectories")
    pairs = []
    for f in sorted(fdir.iterdir()):
        if f.is_file() and (ldir / f.name).is_file():
            pairs.append((f, ldir / f.name))
    if not pairs:
        raise AssetMissing(f"no matching flare/light pairs under {root}")
    return pairs


def synthetic_asset_pair(size: int = 96, seed: int = 0) -> FlareAssetPair:
    """Procedural pair: a compact light disc, and the same disc with a glare halo and streaks."""
    rng = generator(seed, "asset")
    c = (size - 1) / 2.0
    ys, xs = np.indices((size, size), dtype=np.float64)
    dx, dy = xs - c, ys - c
    r = np.hypot(dx, dy)
    light = np.exp(-0.5 * (r / (size * 0.04)) ** 2)
    halo = 0.25 * np.exp(-r / (size * 0.12))
    ang = np.arctan2(dy, dx)
    n = int(rng.integers(4, 9))
    phase = rng.uniform(0, np.pi)
    streaks = 0.2 * np.abs(np.cos(0.5 * n * (ang - phase))) ** 40 * np.exp(-r / (size * 0.3))
    flare = light + halo + streaks
    return FlareAssetPair(flare.astype(np.float32), light.astype(np.float32), (c, c), f"synthetic{seed}")


# rendering ------------------------------------------------------------------------------


def frame_times(script: FlareScript, t_start: int = 0) -> np.ndarray:
    n = script.frame_count()
    return t_start + np.round(np.arange(n) * 1e6 / script.fps).astype(np.int64)


def placement(script: FlareScript, s: float, canvas: tuple[int, int], anchor) -> tuple[np.ndarray, tuple[float, float]]:
    """Forward 2x3 asset->canvas matrix and the light-source canvas position at normalized time ``s``."""
    W, H = canvas
    a = AffineParams.lerp(script.affine_start, script.affine_end, s)
    px, py = script.trajectory.position(s)
    lx = px + a.translation[0] * W
    ly = py + a.translation[1] * H
    th = math.radians(a.rotation)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    sh = np.array([[1.0, math.tan(math.radians(a.shear))], [0.0, 1.0]])
    M = rot @ sh * a.scale
    off = np.array([lx, ly]) - M @ np.asarray(anchor, dtype=np.float64)
    return np.hstack([M, off[:, None]]), (lx, ly)


def warp(raster: np.ndarray, matrix: np.ndarray, canvas: tuple[int, int]) -> np.ndarray:
    out = cv2.warpAffine(
        np.ascontiguousarray(raster, dtype=np.float32),
        matrix.astype(np.float64),
        (int(canvas[0]), int(canvas[1])),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0.0,
    )
    return np.maximum(out, 0.0)


def reflective_flare_frame(light_pos, params: ReflectiveParams, t: float, canvas: tuple[int, int]) -> np.ndarray:
    """Ghost blobs along the line through the optical center plus a starburst at the light.

    ``t`` is in microseconds and only rotates the starburst (``burst_spin``).
    """
    W, H = canvas
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    lx, ly = float(light_pos[0]), float(light_pos[1])
    out = np.zeros((H, W), dtype=np.float64)
    xs = np.arange(W, dtype=np.float64)
    ys = np.arange(H, dtype=np.float64)
    for g, sig, amp in zip(params.factors, params.sigmas, params.amplitudes()):
        gx = cx + g * (lx - cx)
        gy = cy + g * (ly - cy)
        # separable Gaussian restricted to +-4 sigma
        x0, x1 = max(0, int(gx - 4 * sig)), min(W, int(gx + 4 * sig) + 2)
        y0, y1 = max(0, int(gy - 4 * sig)), min(H, int(gy + 4 * sig) + 2)
        if x0 >= x1 or y0 >= y1:
            continue
        fx = np.exp(-0.5 * ((xs[x0:x1] - gx) / sig) ** 2)
        fy = np.exp(-0.5 * ((ys[y0:y1] - gy) / sig) ** 2)
        out[y0:y1, x0:x1] += amp * np.outer(fy, fx)
    if params.burst_gain > 0:
        rad = params.burst_radius
        x0, x1 = max(0, int(lx - 6 * rad)), min(W, int(lx + 6 * rad) + 2)
        y0, y1 = max(0, int(ly - 6 * rad)), min(H, int(ly + 6 * rad) + 2)
        if x0 < x1 and y0 < y1:
            dx = xs[x0:x1][None, :] - lx
            dy = ys[y0:y1][:, None] - ly
            r = np.hypot(dx, dy)
            phi = np.arctan2(dy, dx) - math.radians(params.burst_angle + params.burst_spin * t / 1e6)
            lobe = (0.5 + 0.5 * np.cos(params.lobes * phi)) ** 8
            out[y0:y1, x0:x1] += params.burst_gain * lobe * np.exp(-r / rad)
    return out.astype(np.float32)


@dataclass
class RenderedFrame:
    t: int
    anchor: tuple[float, float]
    scattering: np.ndarray
    light: np.ndarray
    reflective: np.ndarray | None

    @property
    def flare(self) -> np.ndarray:
        return self.scattering if self.reflective is None else self.scattering + self.reflective


def render_frame(
    assets: FlareAssetPair, script: FlareScript, canvas: tuple[int, int], k: int, t_start: int = 0, light_only: bool = False
) -> RenderedFrame:
    t = t_start + int(round(k * 1e6 / script.fps))
    s = min(max((t - t_start) / script.duration, 0.0), 1.0)
    matrix, pos = placement(script, s, canvas, assets.anchor)
    gain = flicker_multiplier(script.flicker.waveform, script.flicker.freq, t - t_start) if script.flicker.enabled else 1.0
    light = warp(assets.light_image, matrix, canvas)
    if gain != 1.0:
        light = light * np.float32(gain)
    if light_only:
        return RenderedFrame(t, pos, light, light, None)
    scat = warp(assets.flare_image, matrix, canvas)
    if gain != 1.0:
        scat = scat * np.float32(gain)
    refl = None
    if script.reflective.enabled:
        refl = reflective_flare_frame(pos, script.reflective, t - t_start, canvas)
        if gain != 1.0:
            refl = refl * np.float32(gain)
    return RenderedFrame(t, pos, scat, light, refl)


def iter_frames(
    assets: FlareAssetPair, script: FlareScript, canvas: tuple[int, int], t_start: int = 0
) -> Iterator[RenderedFrame]:
    n = script.frame_count()
    if n < 2:
        raise DegenerateScript(f"script yields {n} frame(s); need at least 2")
    for k in range(n):
        yield render_frame(assets, script, canvas, k, t_start)


def render_pair(
    assets: FlareAssetPair, script: FlareScript, canvas: tuple[int, int] = (640, 480), t_start: int = 0
) -> tuple[IntensityFrameSequence, IntensityFrameSequence]:
    """Flare-corrupted and clean-light sequences from one script.

    Both sequences carry identical ``anchors`` (the per-frame light position).
    """
    frames = list(iter_frames(assets, script, canvas, t_start))
    anchors = np.array([f.anchor for f in frames], dtype=np.float64)
    flare = IntensityFrameSequence(np.stack([f.flare for f in frames]), script.fps, t_start, anchors)
    light = IntensityFrameSequence(np.stack([f.light for f in frames]), script.fps, t_start, anchors.copy())
    return flare, light
