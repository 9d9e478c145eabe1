from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

PROB_EPS = 1e-7


def smooth_targets(targets, label_smoothing: float = 0.0) -> np.ndarray:
    if not 0.0 <= label_smoothing < 0.5:
        raise ValueError("label_smoothing must lie in [0, 0.5)")
    t = np.asarray(targets, dtype=np.float64)
    return t * (1.0 - label_smoothing) + 0.5 * label_smoothing


def bce_loss(pred, targets, label_smoothing: float = 0.0, clamp: bool = True) -> Tensor:
    """Mean binary cross-entropy on probabilities.

    Targets are mapped to ``[s/2, 1 - s/2]``.  With ``clamp`` the predictions
    are clipped to ``[1e-7, 1 - 1e-7]``; without it, a prediction of exactly
    0 or 1 is rejected.
    """
    p = ag.as_tensor(pred)
    t = smooth_targets(targets, label_smoothing)
    if clamp:
        p = ag.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    elif np.any((p.data <= 0.0) | (p.data >= 1.0)):
        raise ValueError("predictions must lie strictly inside (0, 1) when clamp=False")
    ll = t * ag.log(p) + (1.0 - t) * ag.log(1.0 - p)
    return -ll.mean()


def entropy(weights, eps: float = 1e-8, axis: int = -1) -> Tensor:
    """``-sum w log(w + eps)`` along ``axis``."""
    w = ag.as_tensor(weights)
    return -(w * ag.log(w + eps)).sum(axis=axis)
