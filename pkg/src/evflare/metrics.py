"""Restoration metrics on event streams and voxel grids.

Event-level distances work in a 4-D space where every axis is mapped onto
[0, 100]: time by the segment window, x by ``W - 1``, y by ``H - 1`` and
polarity -1 -> 0, +1 -> 100.  Both distances are one-sided (prediction to
ground truth).  Voxel metrics use 8 bins per segment.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import EmptyGroundTruth, GeometryMismatch, InvalidRange, NotDivisible, ShapeMismatch, WindowMismatch
from .events import EventStream, slice_window
from .voxel import DEFAULT_BINS, PolarityVoxelGrid, VoxelGrid, encode, encode_polarity

METRIC_COLUMNS = ("chamfer", "gaussian", "mse", "pmse2", "pmse4", "r_f1", "t_f1", "tp_f1")
METRIC_LABELS = ("Chamfer", "Gaussian", "MSE", "PMSE-2", "PMSE-4", "R-F1", "T-F1", "TP-F1")
SEGMENT_US = 20_000
SIGMA = 0.4
THETA = 0.001
SPAN = 100.0


@dataclass(frozen=True)
class NormalizationSpec:
    window: tuple[int, int]
    geometry: tuple[int, int]

    def scales(self) -> tuple[float, float, float]:
        t0, t1 = self.window
        W, H = self.geometry
        return (SPAN / max(t1 - 1 - t0, 1), SPAN / max(W - 1, 1), SPAN / max(H - 1, 1))

    def spatial(self, s: EventStream) -> np.ndarray:
        """(N, 3) normalized (t, x, y) coordinates."""
        st, sx, sy = self.scales()
        out = np.empty((len(s), 3), dtype=np.float64)
        out[:, 0] = (s.t - self.window[0]) * st
        out[:, 1] = s.x * sx
        out[:, 2] = s.y * sy
        return out

    def points(self, s: EventStream) -> np.ndarray:
        """(N, 4) normalized (t, x, y, p) coordinates."""
        return np.hstack([self.spatial(s), ((s.p.astype(np.float64) + 1) * (SPAN / 2))[:, None]])


def _check_pair(pred: EventStream, gt: EventStream) -> None:
    if pred.geometry != gt.geometry:
        raise GeometryMismatch(f"{pred.geometry} != {gt.geometry}")
    if pred.window != gt.window:
        raise WindowMismatch(f"{pred.window} != {gt.window}")


def _exact_hits(pred: EventStream, gt: EventStream) -> np.ndarray:
    """Mask of pred events that coincide with some gt event (distance 0)."""
    kp = ((pred.t - pred.t0) * pred.height + pred.y) * pred.width + pred.x
    kg = ((gt.t - gt.t0) * gt.height + gt.y) * gt.width + gt.x
    return np.isin(kp * 2 + (pred.p > 0), kg * 2 + (gt.p > 0))


@njit(cache=True)
def _grid_build(G, h, nc):
    n = G.shape[0]
    cell = np.empty(n, np.int64)
    for i in range(n):
        cx = min(int(G[i, 0] / h), nc - 1)
        cy = min(int(G[i, 1] / h), nc - 1)
        cz = min(int(G[i, 2] / h), nc - 1)
        cell[i] = (cx * nc + cy) * nc + cz
    start = np.zeros(nc * nc * nc + 1, np.int64)
    for i in range(n):
        start[cell[i] + 1] += 1
    for c in range(nc * nc * nc):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    pts = np.empty((n, 3), np.float64)
    for i in range(n):
        j = fill[cell[i]]
        fill[cell[i]] += 1
        pts[j, 0] = G[i, 0]
        pts[j, 1] = G[i, 1]
        pts[j, 2] = G[i, 2]
    return pts, start


@njit(cache=True)
def _grid_query(Q, pts, start, h, nc):
    """Exact NN distance by scanning cubic shells of cells until no closer point can exist."""
    out = np.empty(Q.shape[0], np.float64)
    for i in range(Q.shape[0]):
        qx, qy, qz = Q[i, 0], Q[i, 1], Q[i, 2]
        cx = min(int(qx / h), nc - 1)
        cy = min(int(qy / h), nc - 1)
        cz = min(int(qz / h), nc - 1)
        best = np.inf
        r = 0
        while True:
            for ax in range(max(cx - r, 0), min(cx + r, nc - 1) + 1):
                for ay in range(max(cy - r, 0), min(cy + r, nc - 1) + 1):
                    if ax == cx - r or ax == cx + r or ay == cy - r or ay == cy + r:
                        az, z1, step = max(cz - r, 0), min(cz + r, nc - 1), 1
                    else:
                        az, z1, step = cz - r, cz + r, max(2 * r, 1)
                    while az <= z1:
                        if 0 <= az < nc:
                            c = (ax * nc + ay) * nc + az
                            for j in range(start[c], start[c + 1]):
                                dx = pts[j, 0] - qx
                                dy = pts[j, 1] - qy
                                dz = pts[j, 2] - qz
                                d = dx * dx + dy * dy + dz * dz
                                if d < best:
                                    best = d
                        az += step
            # distance from the query to the outside of the scanned block
            lim = min(
                qx - (cx - r) * h, (cx + r + 1) * h - qx,
                qy - (cy - r) * h, (cy + r + 1) * h - qy,
                qz - (cz - r) * h, (cz + r + 1) * h - qz,
            )
            if best <= lim * lim or r > nc:
                break
            r += 1
        out[i] = np.sqrt(best)
    return out


class _GridIndex:
    """Uniform-grid exact nearest-neighbour index over points in [0, SPAN]^3."""

    def __init__(self, pts: np.ndarray):
        n = len(pts)
        nc = int(np.clip(np.ceil(n ** (1.0 / 3.0) / 0.8), 1, 128))
        self.h = SPAN / nc
        self.nc = nc
        self.pts, self.start = _grid_build(np.ascontiguousarray(pts, dtype=np.float64), self.h, nc)

    def query(self, q: np.ndarray) -> np.ndarray:
        return _grid_query(np.ascontiguousarray(q, dtype=np.float64), self.pts, self.start, self.h, self.nc)


def nn_distances(pred: EventStream, gt: EventStream, norm: NormalizationSpec | None = None) -> np.ndarray:
    """Exact normalized nearest-neighbour distance from every pred event to the gt set."""
    _check_pair(pred, gt)
    norm = norm or NormalizationSpec(pred.window, pred.geometry)
    if len(pred) == 0:
        return np.zeros(0)
    if len(gt) == 0:
        raise EmptyGroundTruth("ground truth is empty but the prediction is not")
    d = np.zeros(len(pred))
    todo = ~_exact_hits(pred, gt)
    if not todo.any():
        return d
    P = norm.spatial(pred)
    G = norm.spatial(gt)
    gpos = gt.p > 0
    trees = {}
    for pol in (True, False):
        pts = G[gpos == pol]
        trees[pol] = _GridIndex(pts) if len(pts) else None
    ppos = pred.p > 0
    for pol in (True, False):
        idx = np.nonzero(todo & (ppos == pol))[0]
        if len(idx) == 0:
            continue
        q = P[idx]
        same, other = trees[pol], trees[not pol]
        best = np.full(len(idx), np.inf) if same is None else same.query(q)
        # a different-polarity neighbour costs at least SPAN, so only look when the same side is farther
        far = best > SPAN
        if other is not None and far.any():
            dd = other.query(q[far])
            best[far] = np.minimum(best[far], np.sqrt(dd * dd + SPAN * SPAN))
        d[idx] = best
    return d


def chamfer_distance(pred: EventStream, gt: EventStream, norm: NormalizationSpec | None = None) -> float:
    d = nn_distances(pred, gt, norm)
    return float(d.mean()) if len(d) else 0.0


def gaussian_distance(
    pred: EventStream, gt: EventStream, norm: NormalizationSpec | None = None, sigma: float = SIGMA
) -> float:
    d = nn_distances(pred, gt, norm)
    return float(np.mean(-np.expm1(-(d * d) / sigma))) if len(d) else 0.0


def _values(g) -> np.ndarray:
    return np.asarray(g.values if hasattr(g, "values") else g, dtype=np.float64)


def voxel_mse(pred: VoxelGrid, gt: VoxelGrid) -> float:
    a, b = _values(pred), _values(gt)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} != {b.shape}")
    return float(np.mean((a - b) ** 2))


def avg_pool(v: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping k x k mean over the last two axes."""
    H, W = v.shape[-2:]
    if H % k or W % k:
        raise NotDivisible(f"{H}x{W} is not divisible by {k}")
    return v.reshape(v.shape[:-2] + (H // k, k, W // k, k)).mean(axis=(-3, -1))


def pooled_mse(pred: PolarityVoxelGrid, gt: PolarityVoxelGrid, k: int = 2) -> float:
    a, b = _values(pred), _values(gt)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} != {b.shape}")
    if k < 1:
        raise NotDivisible("pool size must be >= 1")
    return float(np.mean((avg_pool(a, k) - avg_pool(b, k)) ** 2))


def f1_binary(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    tp = int(np.count_nonzero(pred_mask & gt_mask))
    fp = int(np.count_nonzero(pred_mask & ~gt_mask))
    fn = int(np.count_nonzero(~pred_mask & gt_mask))
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def f1_scores(pred: PolarityVoxelGrid, gt: PolarityVoxelGrid, theta: float = THETA) -> tuple[float, float, float]:
    """(R-F1, T-F1, TP-F1): full grid, bins summed, then bins and polarity summed."""
    a, b = _values(pred), _values(gt)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} != {b.shape}")
    r = f1_binary(a > theta, b > theta)
    at, bt = a.sum(axis=1), b.sum(axis=1)
    t = f1_binary(at > theta, bt > theta)
    tp = f1_binary(at.sum(axis=0) > theta, bt.sum(axis=0) > theta)
    return r, t, tp


# evaluation protocol ---------------------------------------------------------------------


@dataclass
class SegmentMetrics:
    t0: int
    t1: int
    n_pred: int
    n_gt: int
    values: dict
    empty_pred: bool = False


@dataclass
class MetricReport:
    segments: list[SegmentMetrics] = field(default_factory=list)
    dropped_us: int = 0  # length of the partial tail segment left out

    @property
    def mean(self) -> dict:
        if not self.segments:
            return {k: float("nan") for k in METRIC_COLUMNS}
        return {k: float(np.mean([s.values[k] for s in self.segments])) for k in METRIC_COLUMNS}

    def __getattr__(self, name):
        if name in METRIC_COLUMNS:
            return self.mean[name]
        raise AttributeError(name)

    def rows(self) -> list[dict]:
        out = []
        for s in self.segments:
            row = {"t0": s.t0, "t1": s.t1, "n_pred": s.n_pred, "n_gt": s.n_gt, "empty_pred": int(s.empty_pred)}
            row.update(s.values)
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["t0", "t1", "n_pred", "n_gt", "empty_pred", *METRIC_COLUMNS]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
        m = self.mean
        w.writerow({"t0": "mean", **{k: f"{m[k]:.10g}" for k in METRIC_COLUMNS}})
        return buf.getvalue()

    def to_text(self) -> str:
        return format_table([("mean", self.mean)])


def format_table(rows: list[tuple[str, dict]]) -> str:
    """Aligned columns in the fixed metric order."""
    head = ["name", *METRIC_LABELS]
    body = [[name, *(f"{vals[k]:.4f}" for k in METRIC_COLUMNS)] for name, vals in rows]
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [head, *body]]
    return "\n".join(lines) + "\n"


def segment_metrics(
    pred: EventStream, gt: EventStream, bins: int = DEFAULT_BINS, sigma: float = SIGMA, theta: float = THETA
) -> SegmentMetrics:
    _check_pair(pred, gt)
    d = nn_distances(pred, gt, NormalizationSpec(pred.window, pred.geometry))
    vals = {
        "chamfer": float(d.mean()) if len(d) else 0.0,
        "gaussian": float(np.mean(-np.expm1(-(d * d) / sigma))) if len(d) else 0.0,
    }
    vals["mse"] = voxel_mse(encode(pred, bins), encode(gt, bins))
    pp, pg = encode_polarity(pred, bins), encode_polarity(gt, bins)
    vals["pmse2"] = pooled_mse(pp, pg, 2)
    vals["pmse4"] = pooled_mse(pp, pg, 4)
    vals["r_f1"], vals["t_f1"], vals["tp_f1"] = f1_scores(pp, pg, theta)
    return SegmentMetrics(pred.t0, pred.t1, len(pred), len(gt), vals, empty_pred=len(pred) == 0)


def evaluate(
    pred: EventStream,
    gt: EventStream,
    segment: int = SEGMENT_US,
    bins: int = DEFAULT_BINS,
    sigma: float = SIGMA,
    theta: float = THETA,
    threads: int = 1,
) -> MetricReport:
    """All eight metrics per ``segment``-long slice and their means; a partial tail is dropped."""
    _check_pair(pred, gt)
    if segment <= 0:
        raise InvalidRange("segment length must be positive")
    n = pred.duration // segment
    if n == 0:
        raise InvalidRange(f"window of {pred.duration} us holds no full {segment} us segment")
    bounds = [(pred.t0 + i * segment, pred.t0 + (i + 1) * segment) for i in range(n)]

    def one(b):
        return segment_metrics(slice_window(pred, *b), slice_window(gt, *b), bins, sigma, theta)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            segs = list(ex.map(one, bounds))
    else:
        segs = [one(b) for b in bounds]
    return MetricReport(segs, pred.duration - n * segment)
