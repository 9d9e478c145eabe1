"""Deterministic random streams and small statistical helpers.

Everything that needs randomness in this package draws from a
:class:`RandomStream`, a counter-based SplitMix64 generator.  Because the
n-th output is a pure function of ``(state, n)`` the stream can emit whole
arrays in one vectorised call, and independent child streams are derived by
hashing labels into the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def fnv1a64(data: bytes, start: int = FNV_OFFSET) -> int:
    h = start
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, *labels: object) -> int:
    """Hash a parent seed and any number of labels into a child seed."""
    h = fnv1a64(int(seed & _MASK64).to_bytes(8, "little"))
    for label in labels:
        h = fnv1a64(str(label).encode("utf-8") + b"\x1f", h)
    with np.errstate(over="ignore"):
        return int(_mix(np.array([h], dtype=np.uint64))[0])


class RandomStream:
    """SplitMix64 stream.  Single owner; never share between threads."""

    algorithm = "splitmix64"

    def __init__(self, seed: int):
        self._state = np.uint64(int(seed) & _MASK64)

    @property
    def state(self) -> int:
        return int(self._state)

    def child(self, *labels: object) -> "RandomStream":
        return RandomStream(derive_seed(self.state, *labels))

    def next_u64(self, n: int | None = None):
        count = 1 if n is None else int(n)
        with np.errstate(over="ignore"):
            steps = np.arange(1, count + 1, dtype=np.uint64)
            out = _mix(self._state + steps * _GAMMA)
            self._state = self._state + np.uint64(count) * _GAMMA
        return int(out[0]) if n is None else out

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, mean: float = 0.0, sigma: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = mean + sigma * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in ``[low, high)``."""
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        if size is None:
            return low + min(int(self.uniform() * span), span - 1)
        u = self.uniform(size)
        return low + np.minimum((u * span).astype(np.int64), span - 1)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of uniforms; stable sort keeps ties deterministic
        return np.argsort(self.uniform(n), kind="stable")


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def histogram(values, n_bins: int, value_range: tuple[float, float] | None = None) -> Histogram:
    """Equal-width histogram, final bin right-closed.

    With ``value_range=None`` the bins span the data's own [min, max]; a
    constant input gets unit-width edges around the value so all mass lands
    in a single bin.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if values.size == 0:
        raise ValueError("empty values")
    counts, edges = np.histogram(values, bins=n_bins, range=value_range)
    return Histogram(edges=edges, counts=counts.astype(np.int64))


def pearson(x, y) -> float:
    """Pearson correlation; 0.0 when either input has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    if x.size < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def shannon_entropy(p, eps: float = 1e-10) -> float:
    """Natural-log entropy ``-sum p log(p + eps)``."""
    p = np.asarray(p, dtype=np.float64)
    return float(-np.sum(p * np.log(p + eps)))


def on_simplex(w, tol: float = 1e-9) -> bool:
    w = np.asarray(w, dtype=np.float64)
    return bool(np.all(np.isfinite(w)) and np.all(w >= 0.0) and abs(w.sum() - 1.0) <= tol)
