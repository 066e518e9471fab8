"""Counter-based random numbers keyed by (seed, path, stream, counter).

Every variate is a pure function of its coordinates, so a path can be replayed
alone, simulated in a batch with thousands of others, or handed to another
worker and still see exactly the same numbers.  The mixer is the splitmix64
finalizer applied along the coordinate chain.

Two implementations are kept in lockstep: one on Python ints for the scalar
simulators and one on ``uint64`` arrays for the batched ones.
"""

from __future__ import annotations

import hashlib
import math
import os

import numpy as np

MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / 9007199254740992.0

# Stream identifiers.  Kept disjoint so a coupling that reuses one family of
# clocks never perturbs another.
CLOCK = 1  # joint exponential clocks E_i of the Gillespie construction
THIN = 2  # uniforms U_i deciding birth vs death
BIRTH = 3  # birth-only clocks F_i (split-clock construction)
DEATH = 4  # the single death clock F_0 (split-clock construction)
AUX = 5  # anything else (resampling inside tests, synthetic draws)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def _mix_arr(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_key(seed: int, *labels: int) -> int:
    """Fold integer labels into a 64-bit key (used for path and label keys)."""
    z = _mix((int(seed) + _GOLDEN) & MASK)
    for lab in labels:
        z = _mix(((z ^ (int(lab) & MASK)) + _GOLDEN) & MASK)
    return z


def label_key(seed: int, label: tuple[int, ...]) -> int:
    """64-bit key for an Ulam-Harris label.

    Labels have unbounded length, so they are hashed rather than folded; a
    collision would need a 64-bit blake2b clash.
    """
    raw = b"|".join(str(x).encode() for x in label)
    digest = hashlib.blake2b(raw, digest_size=8, key=int(seed & MASK).to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little")


def uniform(key: int, stream: int, counter: int) -> float:
    """Uniform variate in the open interval (0, 1)."""
    z = _mix((key + (stream * _GOLDEN)) & MASK)
    z = _mix((z + (counter + 1) * _GOLDEN) & MASK)
    return ((z >> 11) + 0.5) * _INV_2_53


def exponential(key: int, stream: int, counter: int) -> float:
    """Standard exponential variate."""
    return -math.log(uniform(key, stream, counter))


def path_keys(seed: int, paths: np.ndarray) -> np.ndarray:
    """Vectorized :func:`derive_key` for ``derive_key(seed, path)``."""
    paths = np.asarray(paths, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.full(paths.shape, _mix((int(seed) + _GOLDEN) & MASK), dtype=np.uint64)
        z = _mix_arr((z ^ paths) + np.uint64(_GOLDEN))
    return z


def uniform_arr(keys: np.ndarray, stream: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized :func:`uniform`; ``keys`` and ``counters`` broadcast."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix_arr(keys + np.uint64((stream * _GOLDEN) & MASK))
        z = _mix_arr(z + (counters + np.uint64(1)) * np.uint64(_GOLDEN))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def exponential_arr(keys: np.ndarray, stream: int, counters: np.ndarray) -> np.ndarray:
    return -np.log(uniform_arr(keys, stream, counters))


def seed_from_env(default: int | None = None) -> int | None:
    raw = os.environ.get("ALLOPDMP_SEED")
    if raw is None or raw.strip() == "":
        return default
    return int(raw, 0) & MASK
