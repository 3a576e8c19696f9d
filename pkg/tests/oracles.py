"""Slow, obviously-correct reference implementations used as test oracles.

Everything here is written with plain Python loops or direct formulas and
shares no code with the package beyond the event container.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from evflare.events import EventStream


def random_stream(rng: np.random.Generator, n: int, geometry=(32, 24), window=(0, 20_000)) -> EventStream:
    W, H = geometry
    t = rng.integers(window[0], window[1], n)
    x = rng.integers(0, W, n)
    y = rng.integers(0, H, n)
    p = rng.choice([-1, 1], n)
    return EventStream.from_arrays(t, x, y, p, geometry, window)


def canonical_list(events) -> list[tuple[int, int, int, int]]:
    return [(t, x, y, p) for t, y, x, p in sorted((t, y, x, p) for t, x, y, p in events)]


# voxel grids -----------------------------------------------------------------------------


def brute_encode(stream: EventStream, B: int) -> np.ndarray:
    T = stream.t1 - stream.t0
    v = np.zeros((B, stream.height, stream.width))
    for t, x, y, p in stream:
        b = (t - stream.t0) * B // T
        v[b, y, x] += p
    return v


def brute_encode_polarity(stream: EventStream, B: int) -> np.ndarray:
    T = stream.t1 - stream.t0
    v = np.zeros((2, B, stream.height, stream.width))
    for t, x, y, p in stream:
        b = (t - stream.t0) * B // T
        v[0 if p > 0 else 1, b, y, x] += 1
    return v


def bin_interval(t0: int, t1: int, B: int, b: int) -> tuple[int, int]:
    """Integer times t with floor((t - t0) * B / T) == b, as a half-open range."""
    T = t1 - t0
    ts = [t for t in range(t0, t1) if (t - t0) * B // T == b]
    return ts[0], ts[-1] + 1


# metrics ------------------------------------------------------------------------------------


def normalized_points(stream: EventStream, window, geometry) -> np.ndarray:
    t0, t1 = window
    W, H = geometry
    out = []
    for t, x, y, p in stream:
        out.append(
            (
                100.0 * (t - t0) / max(t1 - 1 - t0, 1),
                100.0 * x / max(W - 1, 1),
                100.0 * y / max(H - 1, 1),
                0.0 if p < 0 else 100.0,
            )
        )
    return np.array(out, dtype=np.float64).reshape(-1, 4)


def brute_nn(pred: EventStream, gt: EventStream) -> np.ndarray:
    P = normalized_points(pred, pred.window, pred.geometry)
    G = normalized_points(gt, gt.window, gt.geometry)
    d = np.empty(len(P))
    for i, q in enumerate(P):
        best = math.inf
        for g in G:
            dd = math.sqrt(sum((a - b) ** 2 for a, b in zip(q, g)))
            best = min(best, dd)
        d[i] = best
    return d


def brute_nn_vectorized(pred: EventStream, gt: EventStream) -> np.ndarray:
    """Full distance matrix; same semantics as brute_nn, usable for larger sizes."""
    P = normalized_points(pred, pred.window, pred.geometry)
    G = normalized_points(gt, gt.window, gt.geometry)
    D = np.sqrt(((P[:, None, :] - G[None, :, :]) ** 2).sum(axis=2))
    return D.min(axis=1)


def brute_chamfer(pred, gt) -> float:
    d = brute_nn(pred, gt)
    return float(np.mean(d)) if len(d) else 0.0


def brute_gaussian(pred, gt, sigma=0.4) -> float:
    d = brute_nn(pred, gt)
    return float(np.mean([1.0 - math.exp(-(v * v) / sigma) for v in d])) if len(d) else 0.0


def naive_mse(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for va, vb in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (va - vb) ** 2
    return total / a.size


def naive_pool(v: np.ndarray, k: int) -> np.ndarray:
    lead = v.shape[:-2]
    H, W = v.shape[-2:]
    out = np.zeros(lead + (H // k, W // k))
    for idx in np.ndindex(*lead):
        for i in range(H // k):
            for j in range(W // k):
                s = 0.0
                for di in range(k):
                    for dj in range(k):
                        s += float(v[idx + (i * k + di, j * k + dj)])
                out[idx + (i, j)] = s / (k * k)
    return out


def set_f1(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    P = {i for i, v in np.ndenumerate(pred_mask) if v}
    G = {i for i, v in np.ndenumerate(gt_mask) if v}
    if not P and not G:
        return 1.0
    if not P or not G:
        return 0.0
    tp = len(P & G)
    if tp == 0:
        return 0.0
    # exact rational arithmetic, rounded once
    prec, rec = Fraction(tp, len(P)), Fraction(tp, len(G))
    return float(2 * prec * rec / (prec + rec))


def naive_f1_scores(a: np.ndarray, b: np.ndarray, theta=0.001) -> tuple[float, float, float]:
    at, bt = a.sum(axis=1), b.sum(axis=1)
    return (
        set_f1(a > theta, b > theta),
        set_f1(at > theta, bt > theta),
        set_f1(at.sum(axis=0) > theta, bt.sum(axis=0) > theta),
    )


# sensor model ---------------------------------------------------------------------------


def scalar_threshold_events(L: list[float], times: list[int], c: float, t_end: int) -> list[tuple[int, int]]:
    """Step-through of one pixel: (timestamp, polarity) per emitted event."""
    out = []
    ref = L[0]
    for k in range(1, len(L)):
        ta, tb = times[k - 1], times[k]
        if ta >= t_end:
            break
        a, b = L[k - 1], L[k]
        d = b - ref
        n = math.floor(abs(d) / c)
        s = 1 if d > 0 else -1
        for j in range(1, n + 1):
            level = ref + s * j * c
            frac = (level - a) / (b - a) if b != a else 1.0
            te = min(max(ta + math.ceil(frac * (tb - ta)), ta + 1), max(tb - 1, ta + 1))
            if te < t_end:
                out.append((te, s))
        ref = ref + n * s * c
    return out
