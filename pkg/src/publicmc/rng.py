"""Counter-based 64-bit random number generator used by all workloads.

The generator is fully specified so that results are bit-reproducible
across processes, task counts and execution strategies:

    mix64(x)            SplitMix64 finalizer (xor-shift / multiply avalanche)
    value(seed, k)      k-th raw draw of a stream = mix64(seed + (k+1)*GAMMA)
    substream(seed, i)  derived stream seed = mix64(seed ^ ((i+1)*GAMMA2))

``value`` is exactly the SplitMix64 output sequence for the given seed,
so the stream matches the published SplitMix64 test vectors.  Because a
draw is a pure function of (seed, counter), any batching or parallel
evaluation order yields identical numbers.

Unit-interval mapping uses the top 53 bits of a draw:

    unit(u)      = (u >> 11) * 2**-53           in [0, 1)
    unit_open(u) = ((u >> 11) + 1) * 2**-53     in (0, 1]   (safe for log)
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15  # golden-ratio increment, odd
GAMMA2 = 0xD1B54A32D192ED03  # second odd increment for substream derivation
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_INV_2_53 = 2.0 ** -53


def mix64(x: int) -> int:
    """SplitMix64 avalanche finalizer over a 64-bit integer."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _M1) & MASK64
    x = ((x ^ (x >> 27)) * _M2) & MASK64
    return x ^ (x >> 31)


def value(seed: int, counter: int) -> int:
    """Raw 64-bit draw number `counter` (0-based) of the stream `seed`."""
    return mix64((seed + (counter + 1) * GAMMA) & MASK64)


def substream(seed: int, index: int) -> int:
    """Derive an independent stream seed; injective in `index` for fixed seed."""
    return mix64((seed ^ (((index + 1) * GAMMA2) & MASK64)) & MASK64)


def unit(u: int) -> float:
    """Map a raw draw to [0, 1)."""
    return (u >> 11) * _INV_2_53


def unit_open(u: int) -> float:
    """Map a raw draw to (0, 1]; never returns 0.0, safe as log() argument."""
    return ((u >> 11) + 1) * _INV_2_53


# Vectorized forms.  uint64 arithmetic wraps modulo 2**64, matching the
# scalar definitions bit for bit.

_NP_GAMMA = np.uint64(GAMMA)
_NP_M1 = np.uint64(_M1)
_NP_M2 = np.uint64(_M2)
_NP_30 = np.uint64(30)
_NP_27 = np.uint64(27)
_NP_31 = np.uint64(31)
_NP_11 = np.uint64(11)


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array."""
    x = (x ^ (x >> _NP_30)) * _NP_M1
    x = (x ^ (x >> _NP_27)) * _NP_M2
    return x ^ (x >> _NP_31)


def values(seed: int, start: int, count: int) -> np.ndarray:
    """Raw draws `start .. start+count-1` of stream `seed` as uint64 array."""
    counters = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return mix64_array(np.uint64(seed) + counters * _NP_GAMMA)


def values_at(seed_arr: np.ndarray, counter_arr: np.ndarray) -> np.ndarray:
    """Per-element draw: for each i, draw number counter_arr[i] of seed_arr[i]."""
    return mix64_array(seed_arr + (counter_arr + np.uint64(1)) * _NP_GAMMA)


def substream_array(seed: int, start: int, count: int) -> np.ndarray:
    """Derived stream seeds for indices `start .. start+count-1`."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return mix64_array(np.uint64(seed) ^ (idx * np.uint64(GAMMA2)))


def unit_array(u: np.ndarray) -> np.ndarray:
    """Vectorized map to [0, 1)."""
    return (u >> _NP_11).astype(np.float64) * _INV_2_53


def unit_open_array(u: np.ndarray) -> np.ndarray:
    """Vectorized map to (0, 1]."""
    return ((u >> _NP_11) + np.uint64(1)).astype(np.float64) * _INV_2_53
