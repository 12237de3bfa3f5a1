"""Isotropic noise models and fixed (non-learned) denoisers."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .tensor import SeededStream, substream_generators

POISSON_SCALE = 255.0
_CHUNK = 256


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    SALT_AND_PEPPER = "salt_and_pepper"
    POISSON = "poisson"


class DenoiserKind(str, Enum):
    NONE = "none"
    GAUSSIAN_SMOOTHING = "gaussian_smoothing"
    MEDIAN_FILTER = "median_filter"


@dataclass(frozen=True)
class NoiseModel:
    """Per-element i.i.d. noise of scale ``sigma``.

    ``sigma`` is the standard deviation for Gaussian noise and the per-pixel
    corruption probability for salt-and-pepper noise.  Poisson noise draws
    photon counts at a fixed 8-bit scale; ``sigma == 0`` disables it.
    """

    kind: NoiseKind = NoiseKind.SALT_AND_PEPPER
    sigma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.sigma >= 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.kind is NoiseKind.SALT_AND_PEPPER and self.sigma > 1:
            raise ConfigError("salt-and-pepper sigma is a probability and must be <= 1")


@dataclass(frozen=True)
class Denoiser:
    kind: DenoiserKind = DenoiserKind.MEDIAN_FILTER
    window: int = 3
    smoothing_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DenoiserKind(self.kind))
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"denoiser window must be odd and >= 1, got {self.window}")
        if self.kind is DenoiserKind.GAUSSIAN_SMOOTHING and not self.smoothing_sigma > 0:
            raise ConfigError("smoothing_sigma must be positive")


def _draw(x: np.ndarray, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    if model.kind is NoiseKind.GAUSSIAN:
        return rng.standard_normal(x.shape)
    if model.kind is NoiseKind.SALT_AND_PEPPER:
        return rng.random(x.shape)
    return rng.poisson(np.clip(x, 0.0, 1.0) * POISSON_SCALE).astype(np.float64)


def _apply(x: np.ndarray, draws: np.ndarray, model: NoiseModel) -> np.ndarray:
    if model.kind is NoiseKind.GAUSSIAN:
        out = x + model.sigma * draws
    elif model.kind is NoiseKind.SALT_AND_PEPPER:
        # u < sigma/2 -> pepper (0), sigma/2 <= u < sigma -> salt (1)
        out = np.where(draws < model.sigma, (draws >= 0.5 * model.sigma).astype(draws.dtype), x)
    else:
        out = draws / POISSON_SCALE
    return np.clip(out, 0.0, 1.0)


def perturb(x: np.ndarray, model: NoiseModel, stream: SeededStream) -> np.ndarray:
    """Return ``clamp01(x + eta)`` with eta drawn from *stream*."""
    x = np.asarray(x, dtype=np.float64)
    if model.sigma == 0:
        return x.copy()
    return _apply(x, _draw(x, model, stream.generator()), model)


def perturb_copies(x: np.ndarray, model: NoiseModel, master_seed: int,
                   start: int, stop: int, dtype=np.float64) -> np.ndarray:
    """Noisy copies ``start..stop-1`` of *x*; copy ``i`` uses substream ``i``.

    Row ``j`` equals ``perturb(x, model, SeededStream(master_seed, start + j))``
    regardless of how the index range is chunked.
    """
    x = np.asarray(x, dtype=np.float64)
    if model.sigma == 0:
        return np.broadcast_to(x, (stop - start,) + x.shape).astype(dtype)
    draws = np.empty((stop - start,) + x.shape)
    for j, rng in enumerate(substream_generators(master_seed, range(start, stop))):
        draws[j] = _draw(x, model, rng)
    return _apply(x, draws, model).astype(dtype, copy=False)


def gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    t = np.arange(window, dtype=np.float64) - (window - 1) / 2
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _median3x3(x: np.ndarray) -> np.ndarray:
    # 19-comparator median-of-9 network over the edge-replicated neighbourhood
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x, pad, mode="edge")
    h, w = x.shape[-2:]
    p = [xp[..., i:i + h, j:j + w].copy() for i in range(3) for j in range(3)]
    tmp = np.empty_like(p[0])
    for a, b in ((1, 2), (4, 5), (7, 8), (0, 1), (3, 4), (6, 7), (1, 2), (4, 5),
                 (7, 8), (0, 3), (5, 8), (4, 7), (3, 6), (1, 4), (2, 5), (4, 7),
                 (4, 2), (6, 4), (4, 2)):
        np.minimum(p[a], p[b], out=tmp)
        np.maximum(p[a], p[b], out=p[b])
        p[a], tmp = tmp, p[a]
    return p[4]


def denoise(x: np.ndarray, d: Denoiser) -> np.ndarray:
    """Filter each channel of an image, or of every image in a batch.

    Filtering acts on the last two (spatial) axes with edge replication.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if d.kind is DenoiserKind.NONE or d.window == 1:
        return x.copy()
    if d.kind is DenoiserKind.MEDIAN_FILTER:
        if d.window == 3:
            if x.ndim == 4 and len(x) > _CHUNK:
                # chunking keeps the comparator network's working set in cache
                return np.concatenate([_median3x3(x[i:i + _CHUNK])
                                       for i in range(0, len(x), _CHUNK)])
            return _median3x3(x)
        size = (1,) * (x.ndim - 2) + (d.window, d.window)
        return ndimage.median_filter(x, size=size, mode="nearest")
    k = gaussian_kernel(d.window, d.smoothing_sigma).astype(x.dtype)
    out = ndimage.correlate1d(x, k, axis=-2, mode="nearest")
    return ndimage.correlate1d(out, k, axis=-1, mode="nearest")
