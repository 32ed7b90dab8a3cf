"""Counter-based random numbers.

Every variate is a pure function of ``(seed, stream, index, draw)``: a
sample's stream is a SplitMix64 sequence whose starting state is a hash of
``(seed, stream, index)``. Nothing is stateful, so a sample can be regenerated
in isolation and the result does not depend on how indices are split across
workers.

The numpy and pure-Python paths produce bit-identical outputs.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_STREAM_SALT = 0xD1B54A32D192ED03
_INV_2_53 = 2.0 ** -53

# stream ids
PERPETUITY = 0
DOMINATING = 1
GEOMETRIC = 2


def mix64(z: int) -> int:
    """SplitMix64 output function on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MUL1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream: int) -> int:
    return mix64(mix64(seed & MASK64) ^ ((stream * _STREAM_SALT) & MASK64))


def sample_base(seed: int, stream: int, index: int) -> int:
    return mix64(stream_key(seed, stream) + index * GOLDEN)


def sample_bases(seed: int, stream: int, indices: np.ndarray) -> np.ndarray:
    key = np.uint64(stream_key(seed, stream))
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64_array(key + idx * np.uint64(GOLDEN))


def raw(base: int, draw: int) -> int:
    return mix64(base + (draw + 1) * GOLDEN)


def raw_array(bases: np.ndarray, draw: int) -> np.ndarray:
    step = np.uint64(((draw + 1) * GOLDEN) & MASK64)
    return mix64_array(bases + step)


def uniform(base: int, draw: int) -> float:
    """Uniform variate on [0, 1) with 53 random bits."""
    return (raw(base, draw) >> 11) * _INV_2_53


def uniform_array(bases: np.ndarray, draw: int) -> np.ndarray:
    return (raw_array(bases, draw) >> np.uint64(11)).astype(np.float64) * _INV_2_53


class Stream:
    """Position of one sample's random stream: ``(seed, stream, index)``.

    ``uniform(draw)`` returns the ``draw``-th variate; calls may happen in
    any order.
    """

    __slots__ = ("seed", "stream", "index", "_base")

    def __init__(self, seed: int, index: int, stream: int = PERPETUITY):
        self.seed = int(seed)
        self.stream = int(stream)
        self.index = int(index)
        self._base = sample_base(self.seed, self.stream, self.index)

    def uniform(self, draw: int = 0) -> float:
        return uniform(self._base, draw)

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, index={self.index}, stream={self.stream})"
