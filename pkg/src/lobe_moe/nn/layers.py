from __future__ import annotations

import math

import numpy as np

from ..stats import RandomStream
from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor carrying its own AdamW moment buffers."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


class Module:
    """Container whose parameters are discovered from its attributes in definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.data.shape}")
            p.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot_uniform(rng: RandomStream, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_out, fan_in), -bound, bound)


def dense(x, weight, bias) -> Tensor:
    """``x @ weight.T + bias``."""
    x = ag.as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape} vs weight {weight.shape}")
    return ag.matmul(x, ag.transpose(weight)) + bias


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: RandomStream, zero: bool = False):
        w = np.zeros((n_out, n_in)) if zero else glorot_uniform(rng, n_in, n_out)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x):
        return dense(x, self.weight, self.bias)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x = ag.as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ag.sqrt(var + eps) * gain + bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over inputs shaped (batch, tokens, d_model)."""

    def __init__(self, d_model: int, n_heads: int, rng: RandomStream):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.q = Dense(d_model, d_model, rng)
        self.k = Dense(d_model, d_model, rng)
        self.v = Dense(d_model, d_model, rng)
        self.out = Dense(d_model, d_model, rng)
        self.last_weights = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return ag.transpose(x.reshape(b, t, self.n_heads, d // self.n_heads), (0, 2, 1, 3))

    def forward(self, q, k=None, v=None):
        q = ag.as_tensor(q)
        k = q if k is None else ag.as_tensor(k)
        v = q if v is None else ag.as_tensor(v)
        b, t, d = q.shape
        dh = d // self.n_heads
        qh, kh, vh = self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v))
        scores = ag.matmul(qh, ag.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(dh))
        weights = ag.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = ag.transpose(ag.matmul(weights, vh), (0, 2, 1, 3)).reshape(b, t, d)
        return self.out(ctx)


class MLP(Module):
    """Dense layers with ReLU between them (none after the last)."""

    def __init__(self, sizes, rng: RandomStream, zero_last: bool = False):
        self.layers = [Dense(a, b, rng, zero=zero_last and i == len(sizes) - 2)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def forward(self, x, return_hidden: bool = False):
        h = ag.as_tensor(x)
        hidden = h
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ag.relu(h)
                hidden = h
        return (h, hidden) if return_hidden else h
