"""Base classifiers: the pluggable interface and a small numpy network.

``SmallNet`` is a stride-2 convolutional stack followed by fully-connected
layers, with an exact hand-written backward pass so that white-box attacks
can run without an autodiff framework.  Training and gradients use float64;
``predict_proba`` runs in float32 because MedRDF pushes thousands of noisy
copies through it per image.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CapabilityError, ConfigError, InvalidInputError, ParseError

CROSS_ENTROPY = "cross_entropy"
MARGIN = "margin"
LOSSES = (CROSS_ENTROPY, MARGIN)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def runner_up(z: np.ndarray, y) -> np.ndarray:
    """Index of the largest entry other than ``y`` in each row (lowest index on ties)."""
    z = np.array(z, dtype=np.float64, ndmin=2)
    y = np.broadcast_to(np.asarray(y), (z.shape[0],))
    z[np.arange(z.shape[0]), y] = -np.inf
    return z.argmax(axis=1)


class Classifier:
    """A base model ``h``: batched class probabilities, optionally input gradients.

    Subclasses implement ``_proba`` on a validated ``(N, C, H, W)`` batch.
    Models that can differentiate also override ``loss_gradient``.
    """

    num_classes: int
    input_shape: tuple
    max_batch: int = 1 << 16

    def _proba(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, batch) -> np.ndarray:
        batch = np.asarray(batch)
        if batch.ndim == 3:
            raise InvalidInputError("predict_proba expects a batch; wrap single images")
        if batch.ndim != 4 or batch.shape[0] == 0:
            raise InvalidInputError(f"expected a non-empty (N, C, H, W) batch, got {batch.shape}")
        if tuple(batch.shape[1:]) != tuple(self.input_shape):
            raise InvalidInputError(
                f"input shape {batch.shape[1:]} does not match model {self.input_shape}")
        if batch.shape[0] > self.max_batch:
            raise InvalidInputError(f"batch of {batch.shape[0]} exceeds max_batch={self.max_batch}")
        return self._proba(batch)

    def predict_labels(self, batch) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return self.predict_proba(batch).argmax(axis=1)

    @property
    def supports_gradients(self) -> bool:
        return type(self).loss_gradient is not Classifier.loss_gradient

    def loss_gradient(self, batch, labels, loss=CROSS_ENTROPY):
        """Per-sample losses and their gradients with respect to the inputs."""
        raise CapabilityError(f"{type(self).__name__} does not provide input gradients")

    def input_gradient(self, x, y: int, loss=CROSS_ENTROPY) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        _, g = self.loss_gradient(x[None], np.array([y]), loss)
        return g[0]


def predict_label(model: Classifier, x) -> int:
    return int(model.predict_labels(np.asarray(x)[None])[0])


# -- convolution helpers (NHWC, 3x3 kernel, stride 2, zero padding 1) -------

KERNEL = 3
STRIDE = 2
PAD = 1
# inputs are shifted to [-0.5, 0.5] before the first layer
INPUT_CENTRE = 0.5


def _conv_out(n: int) -> int:
    return (n + 2 * PAD - KERNEL) // STRIDE + 1


def _im2col(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))[:, ::STRIDE, ::STRIDE]
    n, ho, wo, c = win.shape[:4]
    # rows ordered (n, i, j); columns ordered (c, ki, kj)
    return win.reshape(n * ho * wo, c * KERNEL * KERNEL)


def _col2im(cols: np.ndarray, shape) -> np.ndarray:
    n, h, w, c = shape
    ho, wo = _conv_out(h), _conv_out(w)
    cols = cols.reshape(n, ho, wo, c, KERNEL, KERNEL)
    xp = np.zeros((n, h + 2 * PAD, w + 2 * PAD, c), dtype=cols.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            xp[:, ki:ki + STRIDE * ho:STRIDE, kj:kj + STRIDE * wo:STRIDE, :] += cols[..., ki, kj]
    return xp[:, PAD:PAD + h, PAD:PAD + w, :]


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    # (k, k, Cin, F) -> (Cin*k*k, F) matching the _im2col column order
    k, _, cin, f = w.shape
    return w.transpose(2, 0, 1, 3).reshape(cin * k * k, f)


class SmallNet(Classifier):
    """ReLU network: ``conv_channels`` stride-2 convs, then ``hidden`` dense layers.

    With no conv and no hidden layers it is a plain linear-logit model.
    """

    def __init__(self, input_shape, num_classes: int, conv_channels: Sequence[int] = (4, 8),
                 hidden: Sequence[int] = (32,), seed: int = 0, max_batch: int = 1 << 16,
                 init_gain: float = 1.0):
        if num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        self.input_shape = tuple(int(s) for s in input_shape)
        if len(self.input_shape) != 3:
            raise ConfigError("input_shape must be (C, H, W)")
        self.num_classes = int(num_classes)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.hidden = tuple(int(h) for h in hidden)
        self.max_batch = int(max_batch)
        self.init_gain = float(init_gain)
        self.params = self._init_params(np.random.default_rng(seed))

    # -- structure --------------------------------------------------------

    def param_shapes(self) -> list:
        c, h, w = self.input_shape
        shapes = []
        for f in self.conv_channels:
            shapes += [(KERNEL, KERNEL, c, f), (f,)]
            c, h, w = f, _conv_out(h), _conv_out(w)
        width = c * h * w
        for out in (*self.hidden, self.num_classes):
            shapes += [(width, out), (out,)]
            width = out
        return shapes

    @property
    def widths(self) -> list:
        return [self.input_shape[0], *self.conv_channels, *self.hidden, self.num_classes]

    def _init_params(self, rng) -> list:
        params = []
        for shape in self.param_shapes():
            if len(shape) == 1:
                params.append(np.zeros(shape))
            else:
                fan_in = int(np.prod(shape[:-1]))
                bound = np.sqrt(6.0 / fan_in) * (self.init_gain if not params else 1.0)
                params.append(rng.uniform(-bound, bound, size=shape))
        return params

    def set_params(self, params) -> None:
        params = [np.array(p, dtype=np.float64) for p in params]
        expected = self.param_shapes()
        if [p.shape for p in params] != expected:
            raise InvalidInputError("parameter shapes do not match the architecture")
        self.params = params

    # -- forward / backward ---------------------------------------------

    def _forward(self, batch, dtype, keep=False):
        params = [p.astype(dtype, copy=False) for p in self.params]
        a = np.asarray(batch, dtype=dtype) - dtype(INPUT_CENTRE)
        a = np.ascontiguousarray(a.transpose(0, 2, 3, 1))
        n = a.shape[0]
        cache = []
        nconv = len(self.conv_channels)
        for i in range(nconv):
            w, b = params[2 * i], params[2 * i + 1]
            cols = _im2col(a)
            z = cols @ _kernel_matrix(w) + b
            z = z.reshape(n, _conv_out(a.shape[1]), _conv_out(a.shape[2]), w.shape[3])
            if keep:
                cache.append((a.shape, cols, z))
            a = np.maximum(z, 0)
        flat_shape = a.shape
        # flatten in (C, H, W) order so the dense weights read like NCHW
        a = a.transpose(0, 3, 1, 2).reshape(n, -1)
        ndense = len(self.hidden) + 1
        for j in range(ndense):
            w, b = params[2 * (nconv + j)], params[2 * (nconv + j) + 1]
            z = a @ w + b
            if keep:
                cache.append((a, z))
            a = np.maximum(z, 0) if j < ndense - 1 else z
        return a, (cache, flat_shape)

    def logits(self, batch, dtype=np.float64) -> np.ndarray:
        return self._forward(batch, dtype)[0]

    def _proba(self, batch):
        return softmax(self._forward(batch, np.float32)[0].astype(np.float64))

    def _backward(self, dlogits, state):
        cache, flat_shape = state
        nconv = len(self.conv_channels)
        grads = [None] * len(self.params)
        d = dlogits
        ndense = len(self.hidden) + 1
        for j in reversed(range(ndense)):
            a, z = cache[nconv + j]
            if j < ndense - 1:
                d = d * (z > 0)
            k = 2 * (nconv + j)
            grads[k] = a.T @ d
            grads[k + 1] = d.sum(axis=0)
            d = d @ self.params[k].T
        n, h, w, c = flat_shape
        d = d.reshape(n, c, h, w).transpose(0, 2, 3, 1)
        for i in reversed(range(nconv)):
            in_shape, cols, z = cache[i]
            d = (d * (z > 0)).reshape(-1, z.shape[-1])
            wk = self.params[2 * i]
            grads[2 * i] = (cols.T @ d).reshape(
                wk.shape[2], KERNEL, KERNEL, wk.shape[3]).transpose(1, 2, 0, 3)
            grads[2 * i + 1] = d.sum(axis=0)
            d = _col2im(d @ _kernel_matrix(wk).T, in_shape)
        return grads, d.transpose(0, 3, 1, 2)

    def _loss_and_dlogits(self, z, labels, loss):
        idx = np.arange(z.shape[0])
        if loss == CROSS_ENTROPY:
            values = -log_softmax(z)[idx, labels]
            dz = softmax(z)
            dz[idx, labels] -= 1.0
        elif loss == MARGIN:
            other = runner_up(z, labels)
            values = z[idx, labels] - z[idx, other]
            dz = np.zeros_like(z)
            dz[idx, labels] = 1.0
            dz[idx, other] = -1.0
        else:
            raise InvalidInputError(f"unknown loss {loss!r}; expected one of {LOSSES}")
        return values, dz

    def loss_gradient(self, batch, labels, loss=CROSS_ENTROPY):
        batch = np.asarray(batch, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        z, state = self._forward(batch, np.float64, keep=True)
        values, dz = self._loss_and_dlogits(z, labels, loss)
        _, dx = self._backward(dz, state)
        return values, dx

    def param_gradient(self, batch, labels):
        """Mean cross-entropy over the batch and its gradient for every parameter."""
        batch = np.asarray(batch, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        z, state = self._forward(batch, np.float64, keep=True)
        values, dz = self._loss_and_dlogits(z, labels, CROSS_ENTROPY)
        grads, _ = self._backward(dz / len(labels), state)
        return float(values.mean()), grads, z


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    """SGD with momentum, L2 weight decay and step learning-rate decay."""

    epochs: int = 30
    momentum: float = 0.9
    weight_decay: float = 1e-6
    learning_rate: float = 0.01
    lr_decay_epochs: list = field(default_factory=lambda: [15, 22])
    lr_decay_factor: float = 0.1
    batch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based *epoch*; decays once each milestone is reached."""
        drops = sum(1 for m in self.lr_decay_epochs if epoch >= m)
        return self.learning_rate * self.lr_decay_factor ** drops


def fit(model: SmallNet, images, labels, cfg: TrainConfig):
    """Train *model* in place; return ``(model, trace)``.

    ``trace`` holds one dict per epoch with the learning rate used, the mean
    training loss and the training accuracy measured during the epoch.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if len(images) != len(labels):
        raise InvalidInputError("images and labels differ in length")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise InvalidInputError("training labels out of range")
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(p) for p in model.params]
    trace = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(images))
        total, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, z = model.param_gradient(images[idx], labels[idx])
            total += loss * len(idx)
            correct += int((z.argmax(axis=1) == labels[idx]).sum())
            if lr == 0:
                continue
            for p, g, v in zip(model.params, grads, velocity):
                g = g + cfg.weight_decay * p
                v *= cfg.momentum
                v += g
                p -= lr * v
        trace.append({"epoch": epoch, "lr": lr, "loss": total / len(images),
                      "accuracy": correct / len(images)})
    return model, trace


# -- checkpoint file -----------------------------------------------------------

CHECKPOINT_MAGIC = b"MEDRDFNN"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: SmallNet, path) -> None:
    """Write *model* as: magic, version, architecture header, float32 parameters.

    All integers are little-endian uint32; parameters follow in declaration
    order as row-major little-endian float32 arrays.
    """
    head = [CHECKPOINT_VERSION, model.num_classes, *model.input_shape, KERNEL, STRIDE,
            len(model.conv_channels), *model.conv_channels, len(model.hidden), *model.hidden]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(f"<{len(head)}I", *head))
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path) -> SmallNet:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ParseError("not a MedRDF checkpoint (bad magic)", path, 0)
    pos = 8

    def take(count):
        nonlocal pos
        end = pos + 4 * count
        if end > len(raw):
            raise ParseError("truncated checkpoint header", path, pos)
        vals = struct.unpack_from(f"<{count}I", raw, pos)
        pos = end
        return vals

    version, k, c, h, w, kernel, stride = take(7)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path, 8)
    if (kernel, stride) != (KERNEL, STRIDE):
        raise ParseError("unsupported convolution geometry", path, 28)
    conv = take(take(1)[0])
    hidden = take(take(1)[0])
    model = SmallNet((c, h, w), k, conv, hidden)
    params = []
    for shape in model.param_shapes():
        size = int(np.prod(shape))
        if pos + 4 * size > len(raw):
            raise ParseError("truncated parameter block", path, pos)
        params.append(np.frombuffer(raw, dtype="<f4", count=size, offset=pos)
                      .reshape(shape).astype(np.float64))
        pos += 4 * size
    if pos != len(raw):
        raise ParseError("trailing bytes after parameters", path, pos)
    model.set_params(params)
    return model
