"""Paired dataset generation.

Per sequence: pick a background window, an asset pair and a flare script,
render flare and clean light, simulate their events, estimate intensity
profiles, fuse both against the shared background and cut the result into
fixed-length paired samples.  Every random choice derives from the master
seed and the sequence index, so any sequence can be regenerated alone and
the output does not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssetMissing, ConfigInvalid, DatasetCorrupt, EvflareError, SourceMissing
from .events import EventStream, read_events, slice_window, write_events
from .flare import (
    FlareAssetPair,
    FlareScript,
    ScriptRanges,
    iter_frames,
    list_asset_pairs,
    load_asset_pair,
    sample_script,
    synthetic_asset_pair,
)
from .fusion import FusionComponent, compose_pair
from .realdata import center_crop
from .rng import derive_seed, generator
from .sensor import AccumulatedProfile, SensorConfig, ThresholdSimulator

MANIFEST = "manifest.json"


@dataclass
class DatasetConfig:
    sources: list[str] = field(default_factory=list)  # background event files (EVT1 or CSV)
    asset_dir: str | None = None  # flare/ + light/ subfolders; None -> procedural assets
    n_train: int = 10  # sequences (background windows) per split
    n_test: int = 2
    canvas: tuple[int, int] = (640, 480)
    window_range: tuple[int, int] = (50_000, 100_000)  # us
    sample_length: int = 20_000  # us
    seed: int = 0
    sensor: SensorConfig = field(default_factory=lambda: SensorConfig(c=0.2, c_range=(0.15, 0.35), i_floor=1e-2))
    ranges: ScriptRanges = field(default_factory=ScriptRanges)
    profile_dt: int = 1000  # us
    bg_level: float = 0.2  # baseline linear intensity of the background profile
    synthetic_assets: int = 4  # procedural pairs used when asset_dir is None

    def validate(self) -> None:
        lo, hi = self.window_range
        if not (50_000 <= lo <= hi <= 100_000):
            raise ConfigInvalid(f"window_range must lie inside [50000, 100000] us, got {self.window_range}")
        if self.sample_length <= 0 or lo // self.sample_length == 0:
            raise ConfigInvalid("sample_length must be positive and fit in the shortest window")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigInvalid("sample counts must be non-negative")
        if self.canvas[0] <= 0 or self.canvas[1] <= 0:
            raise ConfigInvalid("canvas must be positive")
        if self.profile_dt <= 0 or self.sample_length % self.profile_dt:
            raise ConfigInvalid("profile_dt must divide sample_length")
        if not self.bg_level > 0:
            raise ConfigInvalid("bg_level must be positive")
        if not self.sources:
            raise ConfigInvalid("at least one background source is required")
        try:
            self.ranges.validate()
        except EvflareError as exc:
            raise ConfigInvalid(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensor"] = self.sensor.to_dict()
        d["ranges"] = self.ranges.to_dict()
        d["canvas"] = list(self.canvas)
        d["window_range"] = list(self.window_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown dataset config keys: {sorted(extra)}")
        try:
            if "sensor" in d:
                d["sensor"] = SensorConfig.from_dict(d["sensor"])
            if "ranges" in d:
                d["ranges"] = ScriptRanges.from_dict(d["ranges"])
            for key in ("canvas", "window_range"):
                if key in d:
                    d[key] = tuple(int(v) for v in d[key])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc


@dataclass
class PairedSample:
    id: str
    E_ob: EventStream
    E_gt: EventStream
    provenance: dict


@dataclass
class SequenceResult:
    index: int
    split: str
    background: EventStream  # rebased to [0, L)
    flare_events: EventStream
    light_events: EventStream
    E_ob: EventStream
    E_gt: EventStream
    script: FlareScript
    provenance: dict
    samples: list[PairedSample]


class _Resources:
    """Backgrounds and assets loaded once and shared read-only between workers."""

    def __init__(self, config: DatasetConfig):
        self.sources: list[EventStream] = []
        for path in config.sources:
            p = Path(path)
            if not p.is_file():
                raise SourceMissing(f"background source not found: {p}")
            s = read_events(p)
            if s.geometry != tuple(config.canvas):
                if s.width < config.canvas[0] or s.height < config.canvas[1]:
                    raise SourceMissing(f"{p}: geometry {s.geometry} smaller than canvas {config.canvas}")
                s = center_crop(s, config.canvas)
            if s.duration < config.window_range[0]:
                raise SourceMissing(f"{p}: {s.duration} us is shorter than the minimum window")
            self.sources.append(s)
        if config.asset_dir is None:
            self.assets = [synthetic_asset_pair(seed=i) for i in range(max(1, config.synthetic_assets))]
        else:
            pairs = list_asset_pairs(config.asset_dir)
            self.assets = [load_asset_pair(f, l) for f, l in pairs]
        if not self.assets:
            raise AssetMissing("no flare assets")


def _split_of(config: DatasetConfig, index: int) -> str:
    return "train" if index < config.n_train else "test"


def _render_events(assets: FlareAssetPair, script: FlareScript, canvas, c: float, i_floor: float):
    """Stream frames into two simulators; returns (flare events, light events, first flare, first light, anchors)."""
    window = (0, script.duration)
    frames = iter_frames(assets, script, canvas)
    first = next(frames)
    sim_f = ThresholdSimulator(first.flare, first.t, c, i_floor, window)
    sim_l = ThresholdSimulator(first.light, first.t, c, i_floor, window)
    anchors = [first.anchor]
    for fr in frames:
        sim_f.step(fr.flare, fr.t)
        sim_l.step(fr.light, fr.t)
        anchors.append(fr.anchor)
    return sim_f.result(), sim_l.result(), first.flare, first.light, np.array(anchors)


def _rebase(s: EventStream) -> EventStream:
    """Shift a slice so its window starts at 0."""
    return EventStream(s.t - s.t0, s.x, s.y, s.p, *s.geometry, 0, s.duration, check=False)


def generate_sequence(config: DatasetConfig, index: int, resources: _Resources | None = None) -> SequenceResult:
    res = resources or _Resources(config)
    seq_seed = derive_seed(config.seed, "sequence", index)
    rng = generator(seq_seed, "background")
    src_i = int(rng.integers(len(res.sources)))
    src = res.sources[src_i]
    lo, hi = config.window_range
    length = int(rng.integers(lo, min(hi, src.duration) + 1))
    length -= length % config.sample_length
    a = src.t0 + int(rng.integers(0, src.duration - length + 1))
    bg = _rebase(slice_window(src, a, a + length))

    asset_i = int(rng.integers(len(res.assets)))
    assets = res.assets[asset_i]
    script_seed = derive_seed(seq_seed, "script")
    script = sample_script(script_seed, config.ranges, length, config.canvas)
    sensor_seed = derive_seed(seq_seed, "sensor")
    c = config.sensor.contrast(sensor_seed)
    i_floor = config.sensor.i_floor or 1e-6
    ev_f, ev_l, f0, l0, anchors = _render_events(assets, script, config.canvas, c, i_floor)

    dt = config.profile_dt
    bg_c = FusionComponent(bg, AccumulatedProfile(bg, dt, c, config.bg_level))
    fl_c = FusionComponent(ev_f, AccumulatedProfile(ev_f, dt, c, np.maximum(f0, i_floor)))
    li_c = FusionComponent(ev_l, AccumulatedProfile(ev_l, dt, c, np.maximum(l0, i_floor)))
    fusion_seed = derive_seed(seq_seed, "fusion")
    E_ob, E_gt = compose_pair(bg_c, fl_c, li_c, fusion_seed)

    split = _split_of(config, index)
    prov = {
        "sequence": index,
        "split": split,
        "source": str(config.sources[src_i]),
        "source_window": [a, a + length],
        "asset": assets.name,
        "script": script.to_dict(),
        "contrast": c,
        "seeds": {"sequence": seq_seed, "script": script_seed, "sensor": sensor_seed, "fusion": fusion_seed},
        "master_seed": config.seed,
    }
    samples = []
    S = config.sample_length
    for j in range(length // S):
        ob = slice_window(E_ob, j * S, (j + 1) * S)
        gt = slice_window(E_gt, j * S, (j + 1) * S)
        sid = f"{split}_{index:05d}_{j:02d}"
        samples.append(PairedSample(sid, _rebase(ob), _rebase(gt), {**prov, "segment": j, "offset": j * S}))
    return SequenceResult(index, split, bg, ev_f, ev_l, E_ob, E_gt, script, prov, samples)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def make_dataset(config: DatasetConfig, out_dir, threads: int = 1) -> dict:
    """Generate and write every sequence; returns the manifest."""
    config.validate()
    res = _Resources(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        (out / split).mkdir(exist_ok=True)

    def work(i: int) -> list[dict]:
        seq = generate_sequence(config, i, res)
        entries = []
        for smp in seq.samples:
            d = out / seq.split
            ob, gt, pv = d / f"{smp.id}_ob.evt1", d / f"{smp.id}_gt.evt1", d / f"{smp.id}.json"
            write_events(smp.E_ob, ob, "evt1")
            write_events(smp.E_gt, gt, "evt1")
            _write_json(pv, smp.provenance)
            entries.append(
                {
                    "id": smp.id,
                    "sequence": i,
                    "split": seq.split,
                    "ob": f"{seq.split}/{ob.name}",
                    "gt": f"{seq.split}/{gt.name}",
                    "provenance": f"{seq.split}/{pv.name}",
                    "n_ob": len(smp.E_ob),
                    "n_gt": len(smp.E_gt),
                    "sha256_ob": _sha256(ob),
                    "sha256_gt": _sha256(gt),
                }
            )
        return entries

    total = config.n_train + config.n_test
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(total)))
    else:
        parts = [work(i) for i in range(total)]
    samples = [e for p in parts for e in p]
    manifest = {
        "format": 1,
        "config": config.to_dict(),
        "counts": {
            "sequences": total,
            "train": sum(e["split"] == "train" for e in samples),
            "test": sum(e["split"] == "test" for e in samples),
        },
        "samples": samples,
    }
    _write_json(out / MANIFEST, manifest)
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST
    if not path.is_file():
        raise DatasetCorrupt(f"no {MANIFEST} in {dataset_dir}")
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetCorrupt(f"{path}: {exc}") from exc
    if not isinstance(m, dict) or "samples" not in m:
        raise DatasetCorrupt(f"{path}: missing sample list")
    for e in m["samples"]:
        if not all(k in e for k in ("id", "ob", "gt")):
            raise DatasetCorrupt(f"{path}: malformed sample entry {e!r}")
    return m


def iter_samples(dataset_dir, split: str | None = None):
    """Yield ``(entry, E_ob, E_gt)`` for every manifest sample, in manifest order."""
    root = Path(dataset_dir)
    for e in load_manifest(root)["samples"]:
        if split and e.get("split") != split:
            continue
        try:
            ob = read_events(root / e["ob"])
            gt = read_events(root / e["gt"])
        except (OSError, EvflareError) as exc:
            raise DatasetCorrupt(f"sample {e['id']}: {exc}") from exc
        yield e, ob, gt


# procedural background ------------------------------------------------------------------------


def synthetic_background(
    geometry: tuple[int, int] = (640, 480),
    duration: int = 100_000,
    seed: int = 0,
    fps: float = 1000.0,
    c: float = 0.2,
    speed: float = 200.0,
) -> EventStream:
    """Events of a drifting random-grating texture, a stand-in for recorded driving scenes.

    ``speed`` is the texture drift in pixels per second.
    """
    W, H = geometry
    rng = generator(seed, "scene")
    n = 6
    fx = rng.uniform(0.01, 0.08, n) * rng.choice([-1, 1], n)
    fy = rng.uniform(0.01, 0.08, n) * rng.choice([-1, 1], n)
    ph = rng.uniform(0, 2 * np.pi, n)
    amp = rng.uniform(0.2, 1.0, n)
    ang = rng.uniform(0, 2 * np.pi)
    vx, vy = speed * math.cos(ang), speed * math.sin(ang)
    ys, xs = np.indices((H, W), dtype=np.float64)

    def frame(t_us: float) -> np.ndarray:
        s = t_us / 1e6
        g = np.zeros((H, W))
        for k in range(n):
            g += amp[k] * np.sin(2 * np.pi * (fx[k] * (xs - vx * s) + fy[k] * (ys - vy * s)) + ph[k])
        return 0.2 * np.exp(0.5 * g / amp.sum() * 4)

    nf = int(math.ceil(duration * fps / 1e6)) + 1
    times = np.round(np.arange(nf) * 1e6 / fps).astype(np.int64)
    sim = ThresholdSimulator(frame(0), 0, c, 1e-3, (0, duration))
    for t in times[1:]:
        sim.step(frame(float(t)), int(t))
    return sim.result()
