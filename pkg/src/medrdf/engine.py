"""MedRDF prediction: noisy-copy majority vote with binomial abstention.

Each of ``n`` copies of the input is perturbed with isotropic noise,
denoised, and classified by the base model.  The top class is returned only
if a two-sided binomial test rejects a coin flip between the two most-voted
classes at level ``alpha``; otherwise the engine abstains.  The Robust
Metric ``K * (n_A - n_B) / n`` scores how decisive the vote was.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .classifier import Classifier
from .errors import ConfigError, InvalidInputError
from .noise import Denoiser, NoiseModel, denoise, perturb_copies

ABSTAIN = -1

# where each quantity of the method lives in this package
NOTATION = {
    "x": "tensor.as_image",
    "eta": "noise.perturb",
    "sigma": "noise.NoiseModel.sigma",
    "mu": "noise.NoiseKind",
    "D": "noise.denoise",
    "h_theta": "classifier.Classifier",
    "p_k": "classifier.Classifier.predict_proba",
    "K": "classifier.Classifier.num_classes",
    "g": "engine.predict",
    "n": "engine.MedRdfConfig.n",
    "alpha": "engine.MedRdfConfig.alpha",
    "n_A": "engine.Diagnosis.n_A",
    "n_B": "engine.Diagnosis.n_B",
    "k_A": "engine.Diagnosis.k_A",
    "k_B": "engine.Diagnosis.k_B",
    "k_hat_A": "engine.Diagnosis.result",
    "P_k": "engine.Diagnosis.counts",
    "epsilon": "attacks.AttackSpec.epsilon",
    "d": "tensor.linf_distance",
    "RM": "engine.Diagnosis.rm",
}


@dataclass(frozen=True)
class MedRdfConfig:
    n: int = 10_000
    alpha: float = 0.001
    noise: NoiseModel = field(default_factory=NoiseModel)
    denoiser: Denoiser = field(default_factory=Denoiser)
    batch_size: int = 1000
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be a positive copy count")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")


@dataclass
class Diagnosis:
    result: int
    counts: list
    k_A: int
    k_B: int
    n_A: int
    n_B: int
    p_value: float
    rm: float
    elapsed: float = 0.0

    @property
    def abstained(self) -> bool:
        return self.result == ABSTAIN

    def to_dict(self) -> dict:
        return asdict(self)


def _log_binom_pmf(m: int, k: np.ndarray) -> np.ndarray:
    return gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1) - m * math.log(2.0)


def binomial_two_sided_log_pvalue(n_A: int, n_B: int) -> float:
    """Natural log of :func:`binomial_two_sided_pvalue` (does not underflow)."""
    n_A, n_B = int(n_A), int(n_B)
    if n_B < 0 or n_A < n_B or n_A + n_B < 1:
        raise InvalidInputError(f"need n_A >= n_B >= 0 and n_A + n_B >= 1, got ({n_A}, {n_B})")
    m = n_A + n_B
    log_tail = logsumexp(_log_binom_pmf(m, np.arange(n_B + 1, dtype=np.float64)))
    return min(0.0, math.log(2.0) + float(log_tail))


def binomial_two_sided_pvalue(n_A: int, n_B: int) -> float:
    """Exact two-sided p-value of ``n_A`` under Binom(n_A + n_B, 1/2).

    The null is symmetric, so the two-sided value is ``min(1, 2 * P[X <= n_B])``.
    """
    return math.exp(binomial_two_sided_log_pvalue(n_A, n_B))


def robust_metric(n_A: int, n_B: int, K: int, n: int) -> float:
    if K < 2:
        raise InvalidInputError("K must be >= 2")
    if not 0 <= n_B <= n_A <= n:
        raise InvalidInputError(f"need 0 <= n_B <= n_A <= n, got ({n_A}, {n_B}, {n})")
    return K * (n_A - n_B) / n


def min_top_probability(K: int, rm: float) -> float:
    """Smallest top-class vote share compatible with a Robust Metric of *rm*."""
    if K < 2:
        raise InvalidInputError("K must be >= 2")
    if not 0 <= rm <= K:
        raise InvalidInputError(f"rm must lie in [0, {K}], got {rm}")
    return 1.0 / K + (K - 1) / K ** 2 * rm


def diagnose_counts(counts, alpha: float) -> Diagnosis:
    """Turn a vote-count vector into a :class:`Diagnosis` (ties -> lowest index)."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or len(counts) < 2 or counts.min() < 0 or counts.sum() < 1:
        raise InvalidInputError("counts must be a non-negative vector with K >= 2 and n >= 1")
    order = np.argsort(-counts, kind="stable")
    k_a, k_b = int(order[0]), int(order[1])
    n_a, n_b = int(counts[k_a]), int(counts[k_b])
    n = int(counts.sum())
    log_p = binomial_two_sided_log_pvalue(n_a, n_b)
    return Diagnosis(
        result=k_a if log_p <= math.log(alpha) else ABSTAIN,
        counts=counts.tolist(),
        k_A=k_a, k_B=k_b, n_A=n_a, n_B=n_b,
        p_value=math.exp(log_p),
        rm=robust_metric(n_a, n_b, len(counts), n),
    )


def _count_chunk(model: Classifier, x, cfg: MedRdfConfig, start: int, stop: int) -> np.ndarray:
    copies = perturb_copies(x, cfg.noise, cfg.master_seed, start, stop, dtype=np.float32)
    labels = model.predict_labels(denoise(copies, cfg.denoiser))
    return np.bincount(labels, minlength=model.num_classes)


def vote_counts(model: Classifier, x, cfg: MedRdfConfig) -> np.ndarray:
    """Class tallies over the ``n`` denoised noisy copies of *x*.

    Copy ``i`` always uses noise substream ``i``, and per-chunk tallies are
    merged by integer summation, so the result depends on neither
    ``batch_size`` nor ``workers``.
    """
    if cfg.batch_size > model.max_batch:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds the classifier's max_batch {model.max_batch}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != tuple(model.input_shape):
        raise InvalidInputError(f"image shape {x.shape} does not match model {model.input_shape}")
    bounds = [(s, min(s + cfg.batch_size, cfg.n)) for s in range(0, cfg.n, cfg.batch_size)]
    if cfg.workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(lambda b: _count_chunk(model, x, cfg, *b), bounds))
    else:
        parts = [_count_chunk(model, x, cfg, *b) for b in bounds]
    return np.sum(parts, axis=0)


def predict(model: Classifier, x, cfg: MedRdfConfig) -> Diagnosis:
    if model.num_classes < 2:
        raise ConfigError("the base classifier must have at least two classes")
    t0 = time.perf_counter()
    counts = vote_counts(model, x, cfg)
    diagnosis = diagnose_counts(counts, cfg.alpha)
    diagnosis.elapsed = time.perf_counter() - t0
    return diagnosis
