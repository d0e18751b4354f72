"""Training loop, evaluation and multi-stream ensembling."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import Dataset, derive_modality
from .errors import ConfigError, DataError, DimensionError, NumericalError
from .model import SpikingGraphNet, cross_entropy
from .numerics import BatchNorm


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestone: int = 110
    gamma: float = 0.1
    batch_size: int = 64
    epochs: int = 150
    seed: int = 0
    target_accuracy: float = 0.0  # stop once training accuracy reaches this; 0 disables
    time_budget: float = 0.0  # seconds; 0 disables
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: lr until the milestone epoch, then lr * gamma."""
    return cfg.lr * (cfg.gamma if epoch >= cfg.milestone else 1.0)


class SGD:
    """Momentum SGD; weight decay only for parameters flagged ``decay``."""

    def __init__(self, named_params, momentum=0.9, weight_decay=1e-4):
        self.params = [(n, p) for n, p in named_params if p.trainable]
        self.momentum, self.weight_decay = momentum, weight_decay
        self.velocity = {id(p): np.zeros_like(p.value) for _, p in self.params}

    def partition(self) -> tuple[list[str], list[str]]:
        """(names with weight decay, names without)."""
        decayed = [n for n, p in self.params if p.decay]
        plain = [n for n, p in self.params if not p.decay]
        return decayed, plain

    def step(self, lr: float):
        for _, p in self.params:
            g = p.grad
            if p.decay and self.weight_decay:
                g = g + self.weight_decay * p.value
            buf = self.velocity[id(p)]
            buf *= self.momentum
            buf += g
            if lr:
                p.value = (p.value - lr * buf).astype(p.value.dtype)


@dataclass
class History:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def rows(self):
        for i in range(len(self.loss)):
            test = self.test_accuracy[i] if i < len(self.test_accuracy) else ""
            yield i, self.lr[i], self.loss[i], self.accuracy[i], test


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def recalibrate_bn(model: SpikingGraphNet, x, batch_size: int = 64):
    """Replace BN running statistics by their cumulative average over x.

    Runs train-mode forwards without dropout and without touching weights.
    The moving averages kept during training lag the weights when an epoch
    has only a few steps, and spiking thresholds are sensitive to the lag.
    """
    bns = [m for m in model.modules() if isinstance(m, BatchNorm)]
    saved = [b.momentum for b in bns]
    dropout, model.head.dropout = model.head.dropout, 0.0
    model.train()
    try:
        for i, start in enumerate(range(0, len(x), batch_size)):
            for b in bns:
                b.momentum = 1.0 / (i + 1)
            model.forward(x[start:start + batch_size])
    finally:
        for b, m in zip(bns, saved):
            b.momentum = m
        model.head.dropout = dropout
        model.eval()


def train(model: SpikingGraphNet, data: Dataset, cfg: TrainConfig = TrainConfig(),
          test: Dataset | None = None, log=None) -> History:
    """Cross-entropy training with surrogate-gradient backprop. Returns history."""
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    if data.x.shape[-1] != model.V:
        raise DimensionError(f"model built for V={model.V}, data has {data.x.shape[-1]} joints")
    if data.y.max() >= model.cfg.num_classes:
        raise DataError(f"label {int(data.y.max())} exceeds num_classes={model.cfg.num_classes}")
    rng = np.random.default_rng(cfg.seed)
    model.head.dropout_rng = np.random.default_rng([cfg.seed, 1])
    opt = SGD(model.named_parameters(), cfg.momentum, cfg.weight_decay)
    hist = History()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        model.train()
        total_loss, correct = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, rng):
            model.zero_grad()
            logits = model.forward(data.x[idx])
            loss, grad = cross_entropy(logits, data.y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite at epoch {epoch}")
            model.backward(grad)
            opt.step(lr)
            total_loss += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == data.y[idx]))
        hist.loss.append(total_loss / len(data))
        hist.accuracy.append(correct / len(data))
        hist.lr.append(lr)
        if test is not None:
            if cfg.recalibrate_bn:
                recalibrate_bn(model, data.x, cfg.batch_size)
            hist.test_accuracy.append(evaluate(model, test)[1])
        hist.seconds.append(time.perf_counter() - start)
        if log is not None:
            extra = f" test_acc={hist.test_accuracy[-1]:.4f}" if test is not None else ""
            log(f"epoch {epoch} lr={lr:g} loss={hist.loss[-1]:.4f} acc={hist.accuracy[-1]:.4f}{extra}")
        if cfg.target_accuracy and hist.accuracy[-1] >= cfg.target_accuracy:
            break
        if cfg.time_budget and hist.seconds[-1] >= cfg.time_budget:
            break
    if cfg.recalibrate_bn:
        recalibrate_bn(model, data.x, cfg.batch_size)
    model.eval()
    return hist


def predict(model: SpikingGraphNet, x, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits for every sample, computed in chunks."""
    model.eval()
    out = [model.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(model: SpikingGraphNet, data: Dataset, batch_size: int = 64):
    """Returns (logits, accuracy)."""
    logits = predict(model, data.x, batch_size)
    return logits, float(np.mean(logits.argmax(axis=1) == data.y))


def ensemble_logits(stream_logits) -> np.ndarray:
    """Arithmetic mean over streams of (N, classes) logits."""
    stream_logits = [np.asarray(s) for s in stream_logits]
    if not stream_logits:
        raise ConfigError("ensemble needs at least one stream")
    shapes = {s.shape for s in stream_logits}
    if len(shapes) != 1:
        raise DimensionError(f"stream logits disagree in shape: {sorted(shapes)}")
    return np.mean(np.stack(stream_logits), axis=0)


def ensemble_infer(streams: dict[str, SpikingGraphNet], x, batch_size: int = 64) -> np.ndarray:
    """Average the logits of models keyed by modality, each fed its own view of x."""
    if not streams:
        raise ConfigError("ensemble needs at least one stream")
    classes = {m.cfg.num_classes for m in streams.values()}
    if len(classes) != 1:
        raise DimensionError(f"streams disagree on class count: {sorted(classes)}")
    logits = [predict(m, derive_modality(x, kind, m.graph), batch_size) for kind, m in streams.items()]
    return ensemble_logits(logits)
