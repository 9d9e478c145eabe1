from __future__ import annotations

import math

import numpy as np

from .layers import Parameter


class AdamW:
    """AdamW with decoupled weight decay and bias-corrected moments.

    ``groups`` is a list of ``(params, lr)`` pairs; ``set_scale`` rescales
    every group's base rate, which is how the schedulers drive it.
    """

    def __init__(self, groups, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.scale = 1.0

    @classmethod
    def single(cls, params, lr: float, **kw) -> "AdamW":
        return cls([(params, lr)], **kw)

    def params(self) -> list[Parameter]:
        return [p for params, _ in self.groups for p in params]

    def set_scale(self, scale: float) -> None:
        self.scale = scale

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def step(self) -> None:
        for p in self.params():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"NaN/Inf gradient in parameter {p.name or id(p)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for params, base_lr in self.groups:
            lr = base_lr * self.scale
            for p in params:
                g = np.zeros_like(p.data) if p.grad is None else p.grad
                p.data = p.data - lr * self.weight_decay * p.data
                p.m = b1 * p.m + (1.0 - b1) * g
                p.v = b2 * p.v + (1.0 - b2) * g * g
                p.data = p.data - lr * (p.m / c1) / (np.sqrt(p.v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place to a global L2 norm of at most ``max_norm``.

    Returns the factor applied (1.0 when no clipping was needed).
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return 1.0
    factor = max_norm / total
    for p in params:
        if p.grad is not None:
            p.grad = p.grad * factor
    return factor


def cosine_anneal(epoch: int, total: int, lr0: float) -> float:
    if not 0 <= epoch <= total:
        raise ValueError("epoch must lie in [0, total]")
    return lr0 * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


def plateau_reduce(history, lr: float, patience: int = 5, factor: float = 0.5) -> float:
    """Halve ``lr`` each time ``patience`` epochs pass without a new best.

    ``history`` holds the monitored metric (higher is better), newest last.
    """
    if not history:
        return lr
    best = int(np.argmax(history))
    stale = len(history) - 1 - best
    if stale > 0 and stale % patience == 0:
        return lr * factor
    return lr
