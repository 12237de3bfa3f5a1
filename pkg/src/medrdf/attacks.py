"""L-infinity adversarial attacks on a base classifier.

White-box attacks (FGSM, I-FGSM, PGD, margin C&W) need ``loss_gradient``;
SPSA only queries ``predict_proba``.  Every result is projected onto the
intersection of the epsilon-ball around the clean image and the [0, 1] box.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .classifier import CROSS_ENTROPY, MARGIN, Classifier, runner_up
from .errors import CapabilityError, ConfigError
from .tensor import SeededStream


class AttackKind(str, Enum):
    FGSM = "fgsm"
    IFGSM = "ifgsm"
    PGD = "pgd"
    CW = "cw"
    SPSA = "spsa"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = AttackKind.PGD
    epsilon: float = 8 / 255
    steps: Optional[int] = None  # None -> 100 for SPSA, 20 otherwise
    step_size: Optional[float] = None  # None -> 2.5 * epsilon / steps
    random_start: bool = True  # PGD only
    kappa: float = 0.0
    spsa_batch: int = 128
    spsa_lr: float = 0.01
    spsa_delta: float = 0.01
    seed: int = 0
    early_stop: Optional[bool] = None  # None -> True for SPSA and CW only

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.steps is None:
            object.__setattr__(self, "steps", 100 if self.kind is AttackKind.SPSA else 20)
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.spsa_batch < 2 or self.spsa_batch % 2:
            raise ConfigError("spsa_batch must be an even number >= 2 (antithetic pairs)")
        if self.spsa_delta <= 0 or self.spsa_lr <= 0:
            raise ConfigError("spsa_delta and spsa_lr must be > 0")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps

    @property
    def stops_early(self) -> bool:
        if self.early_stop is not None:
            return self.early_stop
        return self.kind in (AttackKind.SPSA, AttackKind.CW)

    @property
    def label(self) -> str:
        if self.kind in (AttackKind.FGSM, AttackKind.CW):
            return self.kind.name.replace("CW", "C&W")
        if self.kind is AttackKind.IFGSM:
            return f"I-FGSM-{self.steps}"
        return f"{self.kind.name}-{self.steps}"


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: bool
    queries: int


def project(adv, clean, epsilon):
    """Nearest point to *adv* inside the epsilon-ball around *clean* and the unit box."""
    return np.clip(np.clip(adv, clean - epsilon, clean + epsilon), 0.0, 1.0)


def _require_gradients(model: Classifier):
    if not model.supports_gradients:
        raise CapabilityError(
            f"{type(model).__name__} has no input gradients; use the SPSA attack instead")


def _label(model, x) -> int:
    return int(model.predict_labels(x[None])[0])


def _finish(model, adv, y, queries) -> AttackResult:
    return AttackResult(adv, _label(model, adv) != y, queries + 1)


def fgsm(model: Classifier, x, y: int, spec: AttackSpec) -> AttackResult:
    """One signed-gradient step of size epsilon on the cross-entropy loss."""
    _require_gradients(model)
    x = np.asarray(x, dtype=np.float64)
    g = model.input_gradient(x, y, CROSS_ENTROPY)
    adv = project(x + spec.epsilon * np.sign(g), x, spec.epsilon)
    return _finish(model, adv, y, 1)


def _signed_ascent(model, x, y, spec, start, loss, direction):
    adv = start
    queries = 0
    for _ in range(spec.steps):
        if spec.stops_early:
            queries += 1
            if _label(model, adv) != y:
                return AttackResult(adv, True, queries)
        g = model.input_gradient(adv, y, loss)
        queries += 1
        adv = project(adv + direction * spec.alpha * np.sign(g), x, spec.epsilon)
    return _finish(model, adv, y, queries)


def ifgsm(model: Classifier, x, y: int, spec: AttackSpec) -> AttackResult:
    _require_gradients(model)
    x = np.asarray(x, dtype=np.float64)
    return _signed_ascent(model, x, y, spec, x, CROSS_ENTROPY, 1.0)


def pgd(model: Classifier, x, y: int, spec: AttackSpec) -> AttackResult:
    """I-FGSM started from a uniform random point of the epsilon-ball."""
    _require_gradients(model)
    x = np.asarray(x, dtype=np.float64)
    start = x
    if spec.random_start and spec.epsilon > 0:
        rng = SeededStream(spec.seed).generator()
        start = project(x + rng.uniform(-spec.epsilon, spec.epsilon, x.shape), x, spec.epsilon)
    return _signed_ascent(model, x, y, spec, start, CROSS_ENTROPY, 1.0)


def cw_margin(model: Classifier, x, y: int, spec: AttackSpec) -> AttackResult:
    """Projected signed descent on ``max(Z_y - max_{k != y} Z_k, -kappa)``.

    Returns the first iterate that is misclassified with margin at most
    ``-kappa``; otherwise the last iterate.
    """
    _require_gradients(model)
    x = np.asarray(x, dtype=np.float64)
    adv = x
    queries = 0
    for step in range(spec.steps + 1):
        margin, g = model.loss_gradient(adv[None], np.array([y]), MARGIN)
        queries += 1
        if margin[0] < 0 and margin[0] <= -spec.kappa:
            return AttackResult(adv, True, queries)
        if step == spec.steps:
            break
        adv = project(adv - spec.alpha * np.sign(g[0]), x, spec.epsilon)
    return _finish(model, adv, y, queries)


def margin_from_proba(proba: np.ndarray, y: int) -> np.ndarray:
    """Logit margin ``Z_y - max_{k != y} Z_k`` recovered from probabilities.

    Log-probabilities differ from logits by a per-row constant, which cancels.
    """
    logp = np.log(np.maximum(proba, 1e-300))
    other = runner_up(logp, y)
    return logp[:, y] - logp[np.arange(len(logp)), other]


def spsa_gradient(loss_fn: Callable[[np.ndarray], np.ndarray], x, delta: float,
                  num_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Antithetic SPSA estimate of the gradient of a batched scalar loss at *x*.

    Draws ``num_samples // 2`` Rademacher directions ``v`` and evaluates the
    loss at ``x + delta*v`` and ``x - delta*v`` in a single batch.
    """
    x = np.asarray(x, dtype=np.float64)
    half = num_samples // 2
    v = rng.choice(np.array([-1.0, 1.0]), size=(half,) + x.shape)
    values = loss_fn(np.concatenate([x + delta * v, x - delta * v]))
    diff = (values[:half] - values[half:]) / (2 * delta)
    return np.tensordot(diff, v, axes=1) / half


def spsa(model: Classifier, x, y: int, spec: AttackSpec) -> AttackResult:
    """Gradient-free margin minimisation with Adam steps and early stopping."""
    x = np.asarray(x, dtype=np.float64)
    rng = SeededStream(spec.seed).generator()
    adv = x
    queries = 0
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, tiny = 0.9, 0.999, 1e-8

    def loss_fn(batch):
        # probe points may leave the box; the model sees them clipped
        return margin_from_proba(model.predict_proba(np.clip(batch, 0.0, 1.0)), y)

    for t in range(1, spec.steps + 1):
        if spec.stops_early:
            queries += 1
            if _label(model, adv) != y:
                return AttackResult(adv, True, queries)
        if spec.epsilon == 0:
            break
        g = spsa_gradient(loss_fn, adv, spec.spsa_delta, spec.spsa_batch, rng)
        queries += spec.spsa_batch
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + tiny)
        adv = project(adv - spec.spsa_lr * step, x, spec.epsilon)
    return _finish(model, adv, y, queries)


ATTACKS = {
    AttackKind.FGSM: fgsm,
    AttackKind.IFGSM: ifgsm,
    AttackKind.PGD: pgd,
    AttackKind.CW: cw_margin,
    AttackKind.SPSA: spsa,
}


def run_attack(model: Classifier, x, y: int, spec: AttackSpec) -> AttackResult:
    return ATTACKS[spec.kind](model, x, int(y), spec)


def with_seed(spec: AttackSpec, seed: int) -> AttackSpec:
    return replace(spec, seed=seed)
