"""Keyed (counter-based) uniform variates.

Every random decision in the toolkit is a pure function of a key tuple, e.g.
``(seed, source_id, event_ordinal)``, so results never depend on iteration
order, chunking or thread count.  The mixing function is the SplitMix64
finalizer applied to a running combination of the key words.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(k) -> np.ndarray:
    if isinstance(k, (int, np.integer)):
        return np.uint64(int(k) & _MASK64)
    a = np.asarray(k)
    if a.dtype.kind == "u":
        return a.astype(np.uint64)
    return a.astype(np.int64).view(np.uint64)


def hash64(*keys) -> np.ndarray:
    """64-bit hash of a key tuple; array keys broadcast element-wise."""
    with np.errstate(over="ignore"):
        h = np.uint64(0x6A09E667F3BCC909)
        for k in keys:
            h = _mix(h ^ (_as_u64(k) + _GOLDEN))
        return h


def keyed_uniform(*keys) -> np.ndarray:
    """Uniform variates in [0, 1) with 53-bit resolution, one per broadcast key."""
    h = hash64(*keys)
    return (np.asarray(h) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(seed: int, *tags) -> int:
    """Deterministic child seed (non-negative, < 2**63) for a labelled sub-task."""
    words = [int(seed)]
    for tag in tags:
        if isinstance(tag, str):
            raw = tag.encode("utf-8")
            words.append(len(raw))
            words.extend(int.from_bytes(raw[i : i + 8], "little") for i in range(0, len(raw), 8))
        else:
            words.append(int(tag))
    return int(hash64(*words)) >> 1


def generator(seed: int, *tags) -> np.random.Generator:
    """A numpy Generator for sequential sampling inside one labelled sub-task."""
    return np.random.default_rng(derive_seed(seed, *tags))
