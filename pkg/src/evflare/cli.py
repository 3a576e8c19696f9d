"""Command-line interface (``evflare``).

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import baselines, dataset, flare, fusion, metrics, realdata, sensor, voxel
from .errors import ConfigError, ConfigInvalid, DataError
from .events import EventStream, read_events, write_events

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _pair(text: str, cast=int, sep="x") -> tuple:
    try:
        a, b = text.lower().split(sep)
        return cast(a), cast(b)
    except ValueError as exc:
        raise ConfigError(f"expected A{sep}B, got {text!r}") from exc


def _numbers(text: str, n: int, cast=float) -> tuple:
    parts = text.split(",")
    if len(parts) != n:
        raise ConfigError(f"expected {n} comma-separated values, got {text!r}")
    try:
        return tuple(cast(v) for v in parts)
    except ValueError as exc:
        raise ConfigError(f"bad number in {text!r}") from exc


def _load_config(args) -> dict:
    if not args.config:
        return {}
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config must be a JSON object")
    return cfg


def _write(stream: EventStream, path, args) -> None:
    write_events(stream, path, args.format)


def _emit(text: str, path=None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _sensor_config(args, cfg) -> sensor.SensorConfig:
    base = sensor.SensorConfig.from_dict(cfg.get("sensor", {})) if "sensor" in cfg else sensor.SensorConfig()
    c = args.c if getattr(args, "c", None) is not None else base.c
    c_range = base.c_range
    if getattr(args, "c_range", None):
        c_range = _numbers(args.c_range, 2)
    i_floor = args.i_floor if getattr(args, "i_floor", None) is not None else base.i_floor
    return sensor.SensorConfig(c=c, c_range=c_range, i_floor=i_floor)


# commands ------------------------------------------------------------------------------------


def cmd_synth_script(args, cfg):
    ranges = flare.ScriptRanges.from_dict(cfg["ranges"]) if "ranges" in cfg else flare.ScriptRanges()
    script = flare.sample_script(args.seed, ranges, args.duration, _pair(args.canvas))
    _emit(json.dumps(script.to_dict(), sort_keys=True, indent=1) + "\n", args.output)


def _assets(args) -> flare.FlareAssetPair:
    if args.flare_image or args.light_image:
        if not (args.flare_image and args.light_image):
            raise ConfigError("--flare-image and --light-image go together")
        return flare.load_asset_pair(args.flare_image, args.light_image)
    if args.assets:
        pairs = flare.list_asset_pairs(args.assets)
        f, l = pairs[args.asset_index % len(pairs)]
        return flare.load_asset_pair(f, l)
    return flare.synthetic_asset_pair(seed=args.seed)


def cmd_render_flare(args, cfg):
    script = flare.FlareScript.from_json(Path(args.script).read_text(encoding="utf-8"))
    canvas = _pair(args.canvas)
    fl, li = flare.render_pair(_assets(args), script, canvas)
    sensor.write_frames(fl, args.out_flare)
    sensor.write_frames(li, args.out_light)
    if args.dump_frames:
        from .images import save_debug_png

        d = Path(args.dump_frames)
        d.mkdir(parents=True, exist_ok=True)
        scale = float(fl.frames.max()) or 1.0
        for k in range(len(fl)):
            save_debug_png(fl.frames[k], d / f"flare_{k:05d}.png", scale)
            save_debug_png(li.frames[k], d / f"light_{k:05d}.png", scale)


def cmd_simulate(args, cfg):
    frames = sensor.read_frames(args.input, fps=args.fps)
    window = _numbers(args.window, 2, int) if args.window else None
    ev = sensor.simulate_events(frames, _sensor_config(args, cfg), args.seed, window)
    _write(ev, args.output, args)


def cmd_estimate_profile(args, cfg):
    ev = read_events(args.input)
    prof = sensor.estimate_intensity_profile(ev, args.dt, args.c, args.i0)
    sensor.write_frames(sensor.profile_to_frames(prof), args.output)


def _profile_for(stream: EventStream, path, dt, c, i0) -> sensor.IntensityProfile:
    if path:
        seq = sensor.read_frames(path)
        step = int(round(1e6 / seq.fps))
        return sensor.SampledProfile(seq.frames, step, seq.t_start)
    return sensor.estimate_intensity_profile(stream, dt, c, i0)


def cmd_fuse(args, cfg):
    streams = [read_events(p) for p in args.inputs]
    n = len(streams)
    i0 = _numbers(args.i0, n) if args.i0 else (1.0,) * n
    k = _numbers(args.k, n) if args.k else (1.0,) * n
    profs = args.profiles.split(",") if args.profiles else [None] * n
    if len(profs) != n:
        raise ConfigError("need one profile per input")
    comps = [
        fusion.FusionComponent(s, _profile_for(s, p, args.dt, args.c, i), kk) for s, p, i, kk in zip(streams, profs, i0, k)
    ]
    out = fusion.pnl_es_fuse(comps[0], comps[1], args.seed) if n == 2 else fusion.generalized_fuse(comps, args.seed)
    _write(out, args.output, args)


def cmd_make_dataset(args, cfg):
    if not cfg:
        raise ConfigInvalid("make-dataset needs --config with a dataset description")
    dcfg = dataset.DatasetConfig.from_dict(cfg.get("dataset", cfg))
    if args.seed_given:
        dcfg.seed = args.seed
    m = dataset.make_dataset(dcfg, args.output, threads=args.threads)
    print(json.dumps(m["counts"], sort_keys=True))


def cmd_encode(args, cfg):
    voxel.write_voxels(voxel.encode(read_events(args.input), args.bins), args.output)


def cmd_decode(args, cfg):
    _write(voxel.decode(voxel.read_voxels(args.input), args.seed), args.output, args)


def cmd_filter(args, cfg):
    opts = dict(cfg.get(args.method, {}))
    if args.method == "external":
        opts.setdefault("command", args.command)
    if args.method in ("efr", "voxel"):
        opts.setdefault("seed", args.seed)
    m = baselines.get_method(args.method, opts)
    _write(m(read_events(args.input)), args.output, args)


def cmd_align(args, cfg):
    obs, ref = read_events(args.obs), read_events(args.ref)
    res = realdata.align_streams(obs, ref, args.bin, args.max_offset)
    print(json.dumps({**res.__dict__}, sort_keys=True))
    if args.apply:
        out = realdata.shift_time(obs, -res.offset)
        if args.translate:
            dx, dy = _numbers(args.translate, 2, int)
            out = realdata.translate(out, dx, dy)
        _write(out, args.apply, args)


def cmd_inject_noise(args, cfg):
    _write(realdata.inject_background_noise(read_events(args.input), args.rate, args.seed), args.output, args)


def cmd_mask(args, cfg):
    rects = tuple(_numbers(r, 4, int) for r in args.rect or [])
    discs = tuple(_numbers(d, 3) for d in args.disc or [])
    out = realdata.mask_region(read_events(args.input), realdata.Mask(rects, discs), args.mode)
    _write(out, args.output, args)


def cmd_eval(args, cfg):
    rep = metrics.evaluate(read_events(args.pred), read_events(args.gt), args.segment, threads=args.threads)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(), encoding="utf-8")
    sys.stdout.write(rep.to_text())


def cmd_bench(args, cfg):
    from .bench import run_benchmark

    opts = dict(cfg.get(args.method, {}))
    if args.method == "external":
        opts.setdefault("command", args.command)
    res = run_benchmark(args.dataset, args.method, args.output, opts, args.split, args.segment, args.threads)
    sys.stdout.write(res.to_text())


# parser --------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--format", choices=("evt1", "csv"), default=None, help="event output format")

    ap = argparse.ArgumentParser(prog="evflare", description="Event-camera flare simulation and evaluation toolkit")
    sub = ap.add_subparsers(dest="command_name", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth-script", cmd_synth_script, "sample a flare parameter script")
    p.add_argument("--duration", type=int, default=100_000, help="microseconds")
    p.add_argument("--canvas", default="640x480")
    p.add_argument("-o", "--output")

    p = add("render-flare", cmd_render_flare, "render flare and clean-light frame sequences")
    p.add_argument("--script", required=True)
    p.add_argument("--assets", help="directory with flare/ and light/ subfolders")
    p.add_argument("--asset-index", type=int, default=0)
    p.add_argument("--flare-image")
    p.add_argument("--light-image")
    p.add_argument("--canvas", default="640x480")
    p.add_argument("--out-flare", required=True)
    p.add_argument("--out-light", required=True)
    p.add_argument("--dump-frames", help="write debug PNGs here")

    p = add("simulate", cmd_simulate, "convert intensity frames to events")
    p.add_argument("input", help="IFR1 file or frame directory")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--fps", type=float, help="frame rate for frame directories")
    p.add_argument("--c", type=float)
    p.add_argument("--c-range", help="cmin,cmax")
    p.add_argument("--i-floor", type=float)
    p.add_argument("--window", help="t0,t1 in us (default: first frame to last frame + 1)")

    p = add("estimate-profile", cmd_estimate_profile, "intensity profile by event accumulation (IFR1 out)")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dt", type=int, default=1000)
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--i0", type=float, default=1.0)

    p = add("fuse", cmd_fuse, "intensity-weighted fusion of two or more streams")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--profiles", help="comma-separated IFR1 profiles, one per input")
    p.add_argument("--dt", type=int, default=1000)
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--i0", help="comma-separated baselines, one per input")
    p.add_argument("--k", help="comma-separated contribution coefficients")

    p = add("make-dataset", cmd_make_dataset, "generate a paired dataset")
    p.add_argument("-o", "--output", required=True)

    p = add("encode", cmd_encode, "events to VOX1 voxel grid")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bins", type=int, default=voxel.DEFAULT_BINS)

    p = add("decode", cmd_decode, "VOX1 voxel grid to events")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)

    p = add("filter", cmd_filter, "apply a restoration method")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--command", help="executable for --method external")

    p = add("align", cmd_align, "temporal offset between two recordings")
    p.add_argument("obs")
    p.add_argument("ref")
    p.add_argument("--bin", type=int, default=1000)
    p.add_argument("--max-offset", type=int, default=50_000)
    p.add_argument("--apply", help="write the time-corrected observation here")
    p.add_argument("--translate", help="dx,dy applied with --apply")

    p = add("inject-noise", cmd_inject_noise, "add Poisson background activity")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--rate", type=float, required=True, help="events per pixel per second")

    p = add("mask", cmd_mask, "remove or keep events inside a spatial mask")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--rect", action="append", help="x0,y0,x1,y1 (half-open)")
    p.add_argument("--disc", action="append", help="cx,cy,r")
    p.add_argument("--mode", default="remove")

    p = add("eval", cmd_eval, "score a prediction against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--segment", type=int, default=metrics.SEGMENT_US)
    p.add_argument("--csv")

    p = add("bench", cmd_bench, "run a method over a dataset")
    p.add_argument("dataset")
    p.add_argument("--method", required=True)
    p.add_argument("--command", help="executable for --method external")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--segment", type=int, default=metrics.SEGMENT_US)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TypeError, ValueError, KeyError) as exc:
        # malformed config values surface here (e.g. unknown keys in a section)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
