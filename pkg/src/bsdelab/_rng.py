"""Counter-based random streams.

Every uniform is a pure function of ``(seed, path, step, slot)`` so a path
can be regenerated in any order, from any thread, with identical bits.
The mixer is the splitmix64 finaliser applied to a keyed counter.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_K_PATH = np.uint64(0xD1B54A32D192ED03)
_K_STEP = np.uint64(0xABC98388FB8FAC03)
_K_SLOT = np.uint64(0x8CB92BA72F3D8DD7)

SCHEME = "splitmix64-ctr-v1"


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def bits(seed: int, paths: np.ndarray, step: int, slots: np.ndarray) -> np.ndarray:
    """64 random bits for each ``(path, slot)`` pair; shape ``(len(paths), len(slots))``."""
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLD + _GOLD)
        p = paths.astype(np.uint64)[:, None] * _K_PATH
        s = np.uint64(step) * _K_STEP
        k = slots.astype(np.uint64)[None, :] * _K_SLOT
        x = _mix(key ^ p ^ s ^ k)
        return _mix(x + _GOLD)


def uniforms(seed: int, paths: np.ndarray, step: int, slots: np.ndarray) -> np.ndarray:
    """Uniforms in the open interval (0, 1)."""
    b = bits(seed, paths, step, slots) >> np.uint64(11)
    return (b.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed: int, paths: np.ndarray, step: int, slots: np.ndarray) -> np.ndarray:
    return ndtri(uniforms(seed, paths, step, slots))


def poisson_from_uniform(u: np.ndarray, mean: float) -> np.ndarray:
    """Inverse-CDF Poisson draw; exact up to a 1e-16 tail."""
    if mean <= 0:
        return np.zeros(u.shape, dtype=np.int32)
    probs = [np.exp(-mean)]
    k = 0
    total = probs[0]
    while 1.0 - total > 1e-16 and k < 10_000:
        k += 1
        probs.append(probs[-1] * mean / k)
        total += probs[-1]
    cdf = np.cumsum(probs)
    return np.minimum(np.searchsorted(cdf, u, side="left"), len(cdf) - 1).astype(np.int32)
