"""Counter-based uniforms keyed by (seed, trial, stream, index).

Every random number used for trial ``j`` is a pure function of the seed and
``j``, so a trial's events do not depend on which other trials are simulated,
how they are chunked, or how many workers run. The mixer is the SplitMix64
finalizer, applied in two rounds.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_MUL = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TO_UNIT = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def trial_keys(seed: int, trials: np.ndarray) -> np.ndarray:
    """Per-trial 64-bit keys; compute once per batch and pass to :func:`uniform`."""
    base = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    t = np.asarray(trials, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_mix(np.full(t.shape, base)) + (t + np.uint64(1)) * _GOLDEN)


def uniform(keys: np.ndarray, stream: int, index=0) -> np.ndarray:
    """Uniform doubles on [0, 1), one per key, for the given stream/index."""
    idx = np.asarray(index, dtype=np.int64).astype(np.uint64)
    tag = (np.uint64(stream) << np.uint64(32)) + idx + np.uint64(1)
    with np.errstate(over="ignore"):
        z = _mix(keys ^ _mix(tag * _STREAM_MUL))
    return (z >> _S11).astype(np.float64) * _TO_UNIT
