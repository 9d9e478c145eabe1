from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..stats import RandomStream
from .layers import Module
from .optim import AdamW, clip_grad_norm, cosine_anneal, plateau_reduce

SCHEDULERS = ("none", "plateau", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 100
    early_stop_patience: int = 15
    grad_clip_max_norm: float = 1.0
    scheduler: str = "none"
    batch_size: int = 16
    label_smoothing: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.max_epochs < 0 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs >= 0, batch_size >= 1 and patience >= 1 required")
        if self.grad_clip_max_norm <= 0:
            raise ValueError("grad_clip_max_norm must be positive")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")
        if not 0.0 <= self.label_smoothing < 0.5:
            raise ValueError("label_smoothing must lie in [0, 0.5)")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float
    lr_scale: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = -np.inf

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def _n_rows(data: Sequence[np.ndarray]) -> int:
    n = len(data[0])
    if any(len(a) != n for a in data):
        raise ValueError("data arrays disagree on the number of rows")
    return n


def _take(data, idx):
    return tuple(a[idx] for a in data)


def train_loop(model: Module, train: Sequence[np.ndarray], val: Sequence[np.ndarray],
               config: TrainConfig, loss_fn: Callable,
               metric_fn: Callable | None = None,
               optimizer: AdamW | None = None) -> TrainResult:
    """Mini-batch training with early stopping on a validation metric.

    ``loss_fn(model, batch)`` returns a scalar Tensor; ``metric_fn(model, val)``
    returns a float where higher is better (default: negative validation
    loss).  Batch order is a per-epoch permutation drawn from ``config.seed``.
    The parameters of the best validation epoch are restored before return.
    """
    n = _n_rows(train)
    if n == 0 or _n_rows(val) == 0:
        raise ValueError("empty data")
    if optimizer is None:
        optimizer = AdamW.single(model.parameters(), config.learning_rate,
                                 weight_decay=config.weight_decay)
    rng = RandomStream(config.seed).child("batches")
    result = TrainResult()
    best_state = model.state_dict()
    metric_history: list[float] = []
    scale = 1.0
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        if config.scheduler == "cosine":
            scale = cosine_anneal(epoch - 1, config.max_epochs, 1.0)
        optimizer.set_scale(scale)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            model.zero_grad()
            loss = loss_fn(model, _take(train, idx))
            loss.backward()
            clip_grad_norm(optimizer.params(), config.grad_clip_max_norm)
            optimizer.step()
            total += loss.item() * len(idx)
        val_loss = loss_fn(model, tuple(val)).item()
        metric = metric_fn(model, val) if metric_fn is not None else -val_loss
        result.history.append(EpochRecord(epoch, total / n, val_loss, float(metric), scale))
        metric_history.append(float(metric))
        if metric > result.best_metric:
            result.best_metric = float(metric)
            result.best_epoch = epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
        if config.scheduler == "plateau":
            scale = plateau_reduce(metric_history, scale)
        if stale >= config.early_stop_patience:
            break
    model.load_state_dict(best_state)
    return result
