"""Benchmark runner: apply a restoration method to every input of a dataset and score it."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import DeflareMethod, get_method
from .dataset import iter_samples
from .errors import DatasetCorrupt, GeometryMismatch, WindowMismatch
from .events import EventStream, concatenate, slice_window
from .metrics import METRIC_COLUMNS, SEGMENT_US, evaluate, format_table


@dataclass
class BenchmarkResult:
    method: str
    rows: list[dict]

    @property
    def summary(self) -> dict:
        if not self.rows:
            return {k: float("nan") for k in METRIC_COLUMNS}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_COLUMNS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "segments", *METRIC_COLUMNS])
        for r in self.rows:
            w.writerow([r["id"], r["segments"], *(f"{r[k]:.10g}" for k in METRIC_COLUMNS)])
        s = self.summary
        w.writerow(["mean", sum(r["segments"] for r in self.rows), *(f"{s[k]:.10g}" for k in METRIC_COLUMNS)])
        return buf.getvalue()

    def to_text(self) -> str:
        return format_table([(self.method, self.summary)])


def _shifted(stream: EventStream, offset: int) -> EventStream:
    return EventStream(
        stream.t + offset, stream.x, stream.y, stream.p, *stream.geometry, stream.t0 + offset, stream.t1 + offset, check=False
    )


def _restore(m: DeflareMethod, stream: EventStream) -> EventStream:
    out = m(stream)
    if out.geometry != stream.geometry:
        raise GeometryMismatch(f"method {m.name!r} changed the geometry")
    if not (stream.t0 <= out.t0 and out.t1 <= stream.t1):
        raise WindowMismatch(f"method {m.name!r} widened the window")
    # a method may report a narrower window; score it over the input window
    return EventStream(out.t, out.x, out.y, out.p, *stream.geometry, *stream.window, check=False)


def _apply_grouped(m: DeflareMethod, obs: list[EventStream]) -> list[EventStream]:
    """Run ``m`` once over consecutive inputs laid end to end, then cut the output back apart."""
    if len(obs) == 1:
        return [_restore(m, obs[0])]
    parts, off = [], 0
    for ob in obs:
        parts.append(_shifted(ob, off - ob.t0))
        off += ob.duration
    out = _restore(m, concatenate(parts))
    res = []
    for ob, part in zip(obs, parts):
        res.append(_shifted(slice_window(out, part.t0, part.t1), ob.t0 - part.t0))
    return res


def run_benchmark(
    dataset_dir,
    method: str | DeflareMethod,
    output_path=None,
    options: dict | None = None,
    split: str | None = None,
    segment: int = SEGMENT_US,
    threads: int = 1,
) -> BenchmarkResult:
    """Score ``method`` on each sample (per-segment means) and write a CSV with a final mean row.

    Samples cut from one sequence are restored together, in sequence order, so
    stateful methods see the full sequence; scoring stays per sample.
    """
    m = method if isinstance(method, DeflareMethod) else get_method(method, options)
    samples = list(iter_samples(dataset_dir, split))
    if not samples:
        raise DatasetCorrupt(f"{dataset_dir}: no samples")
    groups: dict = {}
    for item in samples:
        groups.setdefault(item[0].get("sequence", item[0]["id"]), []).append(item)

    def one(group):
        preds = _apply_grouped(m, [ob for _, ob, _ in group])
        rows = []
        for (entry, _, gt), pred in zip(group, preds):
            if pred.geometry != gt.geometry or pred.window != gt.window:
                raise DatasetCorrupt(f"sample {entry['id']}: input and ground truth differ in geometry or window")
            rep = evaluate(pred, gt, segment)
            rows.append({"id": entry["id"], "segments": len(rep.segments), **rep.mean})
        return rows

    todo = list(groups.values())
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(one, todo))
    else:
        parts = [one(g) for g in todo]
    result = BenchmarkResult(m.name, [r for p in parts for r in p])
    if output_path is not None:
        Path(output_path).write_text(result.to_csv(), encoding="utf-8")
    return result
