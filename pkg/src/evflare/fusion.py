"""Intensity-ratio event fusion.

Each source event survives with probability equal to its source's share of
the effective intensity at the event's pixel and time::

    w_i = k_i * I_i / sum_j k_j * I_j        (1/N where the sum is zero)

The Bernoulli draw for event ``n`` of source ``i`` is the keyed uniform
``u(seed, i, n)``, so results do not depend on chunking or scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyComponentList, GeometryMismatch, WindowMismatch
from .events import EventStream, merge
from .rng import derive_seed, keyed_uniform
from .sensor import IntensityProfile


@dataclass(frozen=True)
class FusionComponent:
    stream: EventStream
    profile: IntensityProfile
    k: float = 1.0

    def __post_init__(self):
        if self.profile.geometry != self.stream.geometry:
            raise GeometryMismatch(f"profile {self.profile.geometry} vs stream {self.stream.geometry}")
        if not self.profile.covers(self.stream.window):
            raise WindowMismatch(
                f"profile [{self.profile.t0}, {self.profile.t1}) does not cover stream window {self.stream.window}"
            )
        if not self.k >= 0:
            raise ConfigError(f"contribution coefficient must be >= 0, got {self.k}")


def _check(components: Sequence[FusionComponent]) -> None:
    if not components:
        raise EmptyComponentList("fusion needs at least one component")
    first = components[0].stream
    for c in components[1:]:
        if c.stream.geometry != first.geometry:
            raise GeometryMismatch(f"{c.stream.geometry} != {first.geometry}")
        if c.stream.window != first.window:
            raise WindowMismatch(f"{c.stream.window} != {first.window}")
    if not any(c.k > 0 for c in components):
        raise ConfigError("at least one component needs k > 0")


def fusion_weights(intensities, k=None) -> np.ndarray:
    """Weights along axis 0 of ``intensities`` (one row per component)."""
    I = np.asarray(intensities, dtype=np.float64)
    n = I.shape[0]
    k = np.ones(n) if k is None else np.asarray(k, dtype=np.float64)
    if np.any(I < 0):
        raise ValueError("intensities must be non-negative")
    eff = k.reshape((n,) + (1,) * (I.ndim - 1)) * I
    total = eff[0].copy()
    for row in eff[1:]:
        total = total + row
    zero = total == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = eff / np.where(zero, 1.0, total)
    return np.where(zero, 1.0 / n, w)


def _weights_at(components: Sequence[FusionComponent], i: int) -> np.ndarray:
    """Weight of component ``i`` evaluated at every event of component ``i``."""
    s = components[i].stream
    eff = [c.k * c.profile.at(s.t, s.x, s.y) for c in components]
    total = eff[0]
    for e in eff[1:]:
        total = total + e
    zero = total == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = eff[i] / np.where(zero, 1.0, total)
    return np.where(zero, 1.0 / len(components), w)


def retention_masks(components: Sequence[FusionComponent], seed: int) -> list[np.ndarray]:
    """Boolean keep-mask per component."""
    _check(components)
    masks = []
    for i, c in enumerate(components):
        n = len(c.stream)
        if n == 0:
            masks.append(np.zeros(0, dtype=bool))
            continue
        u = keyed_uniform(seed, i, np.arange(n, dtype=np.uint64))
        masks.append(u < _weights_at(components, i))
    return masks


def generalized_fuse(components: Sequence[FusionComponent], seed: int) -> EventStream:
    """N-source fusion; one component is returned unchanged (its weight is 1)."""
    masks = retention_masks(components, seed)
    return merge([c.stream.select(m) for c, m in zip(components, masks)])


def pnl_es_fuse(a: FusionComponent, b: FusionComponent, seed: int) -> EventStream:
    """Two-source fusion; ``a`` is source 0 and ``b`` is source 1 for the keyed draws."""
    _check([a, b])
    kept = []
    for idx, own, other in ((0, a, b), (1, b, a)):
        s = own.stream
        if len(s) == 0:
            kept.append(s)
            continue
        e_own = own.k * own.profile.at(s.t, s.x, s.y)
        e_other = other.k * other.profile.at(s.t, s.x, s.y)
        # keep the summation order (a then b) identical to generalized_fuse
        total = e_own + e_other if idx == 0 else e_other + e_own
        zero = total == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(zero, 0.5, e_own / np.where(zero, 1.0, total))
        u = keyed_uniform(seed, idx, np.arange(len(s), dtype=np.uint64))
        kept.append(s.select(u < w))
    return merge(kept)


def compose_pair(
    bg: FusionComponent, flare: FusionComponent, light: FusionComponent, seed: int
) -> tuple[EventStream, EventStream]:
    """Flare-corrupted input and clean target, fused against one shared background.

    Both fusions use the same derived seed, so each background event sees the
    same uniform draw in both outputs and only the weights differ.
    """
    _check([bg, flare, light])
    s = derive_seed(seed, "compose")
    return pnl_es_fuse(bg, flare, s), pnl_es_fuse(bg, light, s)
