"""Mini-batch SGD with heavy-ball momentum, weight decay, cosine schedule and clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .datasets import Dataset
from .errors import ConfigError, NumericError
from .nn import Gradient, MlpModel, grad_params


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 10
    clip_norm: float | None = 1.0
    # None: anneal over the full run (epochs x batches per epoch)
    schedule_T: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive or None")
        if self.schedule_T is not None and self.schedule_T < 1:
            raise ConfigError("schedule_T must be positive")

    def updated(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def cosine_lr(step: int, T: int, lr0: float) -> float:
    step = min(max(step, 0), T)
    return lr0 * (1.0 + math.cos(math.pi * step / T)) / 2.0


def clip_gradient(grad: Gradient, clip_norm: float) -> Gradient:
    norm = grad.norm()
    if norm > clip_norm:
        return grad.scale(clip_norm / norm)
    return grad


def epoch_batches(indices, batch_size: int, seed: int, epoch: int, stream: int = 0) -> list:
    """Shuffled index batches; the order depends only on (seed, stream, epoch)."""
    idx = np.asarray(indices)
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream, epoch]))
    perm = idx[rng.permutation(idx.size)]
    return [perm[i:i + batch_size] for i in range(0, perm.size, batch_size)]


class CyclicBatches:
    """Endless batch iterator that reshuffles each time the index set is exhausted."""

    def __init__(self, indices, batch_size: int, seed: int, stream: int = 1):
        self.indices = np.asarray(indices)
        self.batch_size = batch_size
        self.seed = seed
        self.stream = stream
        self._pass = 0
        self._queue: list = []

    def next(self) -> np.ndarray:
        if not self._queue:
            self._queue = epoch_batches(self.indices, self.batch_size, self.seed, self._pass, self.stream)
            self._pass += 1
        return self._queue.pop(0)


class SGD:
    """Stateful optimizer; ``step`` returns a new model.

    Only parameter groups (layer indices) listed in ``trainable`` move.
    Clipping applies to the raw gradient of the trainable groups, before the
    weight-decay term is added.
    """

    def __init__(self, model: MlpModel, config: TrainConfig, total_steps: int, trainable: Iterable[int] | None = None):
        self.config = config
        self.T = config.schedule_T or max(total_steps, 1)
        self.steps_taken = 0
        n = len(model.weights)
        self.trainable = set(range(n)) if trainable is None else set(trainable)
        self._buf_w = [np.zeros_like(w) for w in model.weights]
        self._buf_b = [np.zeros_like(b) for b in model.biases]

    @property
    def lr(self) -> float:
        return cosine_lr(min(self.steps_taken, self.T), self.T, self.config.lr0)

    def _mask(self, grad: Gradient) -> Gradient:
        if len(self.trainable) == len(grad.weights):
            return grad
        return Gradient(
            tuple(g if i in self.trainable else np.zeros_like(g) for i, g in enumerate(grad.weights)),
            tuple(g if i in self.trainable else np.zeros_like(g) for i, g in enumerate(grad.biases)),
        )

    def step(self, model: MlpModel, grad: Gradient, noise: Gradient | None = None) -> MlpModel:
        cfg = self.config
        grad = self._mask(grad)
        if cfg.clip_norm is not None:
            grad = clip_gradient(grad, cfg.clip_norm)
        if noise is not None:
            grad = grad + self._mask(noise)
        lr = self.lr
        new_w, new_b = list(model.weights), list(model.biases)
        for i in sorted(self.trainable):
            self._buf_w[i] = cfg.momentum * self._buf_w[i] + (grad.weights[i] + cfg.weight_decay * model.weights[i])
            self._buf_b[i] = cfg.momentum * self._buf_b[i] + (grad.biases[i] + cfg.weight_decay * model.biases[i])
            new_w[i] = model.weights[i] - lr * self._buf_w[i]
            new_b[i] = model.biases[i] - lr * self._buf_b[i]
        self.steps_taken = min(self.steps_taken + 1, self.T)
        return model.with_params(new_w, new_b)


def n_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


EpochCallback = Callable[[int, MlpModel], bool]


def train(
    model: MlpModel,
    dataset: Dataset,
    indices,
    config: TrainConfig,
    callback: EpochCallback | None = None,
) -> tuple:
    """Train on ``dataset`` rows ``indices``; returns ``(model, per-epoch mean loss)``.

    ``callback(epoch, model)`` runs after every epoch; returning True stops
    training early.
    """
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ConfigError("cannot train on an empty index set")
    opt = SGD(model, config, config.epochs * n_batches(indices.size, config.batch_size))
    history = []
    for epoch in range(config.epochs):
        losses = []
        for b, batch in enumerate(epoch_batches(indices, config.batch_size, config.seed, epoch)):
            loss, grad = grad_params(model, dataset.features[batch], dataset.labels[batch])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            model = opt.step(model, grad)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if callback is not None and callback(epoch + 1, model):
            break
    return model, history


def write_loss_history(history, path) -> None:
    lines = ["epoch,loss"] + [f"{i + 1},{loss:.6g}" for i, loss in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")
