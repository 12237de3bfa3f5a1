"""Image containers and seeded random streams.

Images are plain ``numpy`` arrays of shape ``(C, H, W)`` holding intensities
in ``[0, 1]``; batches add a leading axis.  Nothing in the package mutates an
image passed to it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

_MASK64 = (1 << 64) - 1


def as_image(data, shape=None) -> np.ndarray:
    """Return a read-only float64 ``(C, H, W)`` copy of *data*.

    A flat sequence is accepted when *shape* is given.
    """
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise InvalidInputError(
                f"data length {arr.size} does not match shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise InvalidInputError(f"expected a (C, H, W) image, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def linf_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"incompatible tensors: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))


@dataclass(frozen=True)
class SeededStream:
    """Counter-based random stream keyed by ``(master_seed, substream_index)``.

    Backed by the Philox bit generator: the 128-bit key is the master seed in
    the low word and the substream index in the high word, so every substream
    is a distinct Philox key and no two substreams share a sequence.
    """

    master_seed: int
    substream_index: int = 0

    def __post_init__(self):
        if self.substream_index < 0:
            raise InvalidInputError("substream_index must be non-negative")

    def generator(self) -> np.random.Generator:
        key = [self.master_seed & _MASK64, self.substream_index & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))


def substream_generators(master_seed: int, indices):
    """Yield a generator for each substream index, equal to ``SeededStream(...).generator()``.

    One bit generator is re-keyed in place for each index, which avoids
    constructing thousands of objects per image.  Each yielded generator is
    only valid until the next one is requested.
    """
    bitgen = np.random.Philox(key=[master_seed & _MASK64, 0])
    gen = np.random.Generator(bitgen)
    fresh = bitgen.state
    for index in indices:
        state = dict(fresh)
        state["state"] = {"counter": np.zeros(4, np.uint64),
                          "key": np.array([master_seed & _MASK64, index & _MASK64], np.uint64)}
        bitgen.state = state
        yield gen


def derive_seed(seed: int, *path: int) -> int:
    """Deterministically mix *seed* with a path of integers into a new 64-bit seed."""
    ss = np.random.SeedSequence([seed & _MASK64, *path])
    return int(ss.generate_state(1, np.uint64)[0])
