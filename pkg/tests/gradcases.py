"""Finite-difference gradient cases covering every autograd primitive, the layers and the MoE losses.

Each case builder takes a numpy Generator and returns ``(leaves, fn)``:
``leaves`` are tensors requiring grad whose ``.data`` arrays may be
perturbed in place, ``fn()`` rebuilds the scalar output from them.
"""

from __future__ import annotations

import numpy as np

import oracles
from lobe_moe.ensemble import MoEConfig, MoEHead, moe_losses
from lobe_moe.nn import autograd as ag
from lobe_moe.nn import MLP, Dense, LayerNorm, MultiHeadAttention, Tensor, bce_loss, entropy
from lobe_moe.stats import RandomStream

FD_STEP = 1e-6
TOLERANCE = 1e-4


def _leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, lo=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.5, size=shape)


def _project(out, rng):
    r = rng.normal(size=out.shape)
    return lambda t: (t * r).sum()


def _unary(op, sample):
    def build(rng):
        x = _leaf(sample(rng))
        proj = _project(op(x), rng)
        return [x], lambda: proj(op(x))
    return build


def _binary(op, shape_a, shape_b, positive_b=False):
    def build(rng):
        a = _leaf(rng.normal(size=shape_a))
        b_data = rng.uniform(0.5, 2.0, size=shape_b) if positive_b else rng.normal(size=shape_b)
        b = _leaf(b_data)
        proj = _project(op(a, b), rng)
        return [a, b], lambda: proj(op(a, b))
    return build


def _module(make, input_shape):
    def build(rng):
        seed = int(rng.integers(0, 2 ** 31))
        m = make(RandomStream(seed))
        for p in m.parameters():
            p.data = p.data + 0.1 * rng.normal(size=p.data.shape)  # break zero/one inits
        x = _leaf(rng.normal(size=input_shape))
        proj = _project(m(x), rng)
        return [x, *m.parameters()], lambda: proj(m(x))
    return build


def _loss_bce(rng):
    n = int(rng.integers(3, 9))
    p = _leaf(rng.uniform(0.05, 0.95, size=n))
    y = rng.integers(0, 2, size=n).astype(float)
    s = float(rng.uniform(0.0, 0.2))
    return [p], lambda: bce_loss(p, y, label_smoothing=s)


def _loss_entropy(rng):
    w = _leaf(rng.dirichlet(np.ones(5), size=3))
    return [w], lambda: entropy(w).sum()


def _getitem(rng):
    x = _leaf(rng.normal(size=(5, 4)))
    idx = (np.array([0, 2, 2, 4]), slice(None))
    proj = _project(x[idx], rng)
    return [x], lambda: proj(x[idx])


def _concat_stack(rng):
    a, b = _leaf(rng.normal(size=(3, 2))), _leaf(rng.normal(size=(3, 4)))
    c = _leaf(rng.normal(size=(3, 6)))
    f = lambda: ag.stack([ag.concat([a, b], axis=1), c], axis=0)  # noqa: E731
    proj = _project(f(), rng)
    return [a, b, c], lambda: proj(f())


def _reshape_transpose(rng):
    x = _leaf(rng.normal(size=(2, 3, 4)))
    f = lambda: ag.swapaxes(ag.transpose(x.reshape(4, 3, 2), (2, 0, 1)), 0, 2)  # noqa: E731
    proj = _project(f(), rng)
    return [x], lambda: proj(f())


def _moe_component(component):
    def build(rng):
        k = 7
        cfg = MoEConfig(global_dim=6, expert_dim=8, hidden_dim=5, lambda_gating=0.7,
                        lambda_weight=3.0, lambda_diversity=0.9, seed=int(rng.integers(0, 1000)))
        head = MoEHead(k, 5, rng.dirichlet(np.ones(k)), cfg)
        n = int(rng.integers(4, 8))
        g = rng.normal(size=(n, 5))
        r = rng.normal(size=(n, k, 5))
        y = np.r_[0.0, 1.0, rng.integers(0, 2, size=n - 2)]

        def fn():
            prob, gate, phi, w = head(g, r)
            return getattr(moe_losses(prob, y, w, phi, cfg), component)
        return head.parameters(), fn
    return build


CASES = {
    "add_broadcast": _binary(lambda a, b: a + b, (3, 4), (4,)),
    "sub": _binary(lambda a, b: a - b, (2, 3), (2, 3)),
    "mul_broadcast": _binary(lambda a, b: a * b, (2, 3, 4), (3, 1)),
    "div": _binary(lambda a, b: a / b, (3, 4), (3, 4), positive_b=True),
    "rdiv": _unary(lambda x: 2.0 / x, lambda r: r.uniform(0.5, 2.0, size=(4,))),
    "neg": _unary(lambda x: -x, lambda r: r.normal(size=(3,))),
    "power": _unary(lambda x: x ** 2.5, lambda r: r.uniform(0.5, 2.0, size=(3, 2))),
    "matmul_2d": _binary(lambda a, b: a @ b, (3, 4), (4, 5)),
    "matmul_batched": _binary(lambda a, b: ag.matmul(a, b), (2, 3, 4), (2, 4, 2)),
    "exp": _unary(ag.exp, lambda r: r.normal(size=(4,))),
    "log": _unary(ag.log, lambda r: r.uniform(0.3, 3.0, size=(4,))),
    "sqrt": _unary(ag.sqrt, lambda r: r.uniform(0.3, 3.0, size=(4,))),
    "abs": _unary(ag.tabs, lambda r: _away_from_zero(r, (5,))),
    "relu": _unary(ag.relu, lambda r: _away_from_zero(r, (5,))),
    "sigmoid": _unary(ag.sigmoid, lambda r: 4 * r.normal(size=(6,))),
    "softplus": _unary(ag.softplus, lambda r: 4 * r.normal(size=(6,))),
    "clip": _unary(lambda x: ag.clip(x, -0.5, 0.5), lambda r: np.r_[_away_from_zero(r, (3,), 0.6),
                                                                    r.uniform(-0.4, 0.4, size=3)]),
    "sum_axis": _unary(lambda x: ag.tsum(x, axis=1), lambda r: r.normal(size=(3, 4))),
    "sum_keepdims": _unary(lambda x: ag.tsum(x, axis=0, keepdims=True) * x, lambda r: r.normal(size=(3, 4))),
    "mean_axis": _unary(lambda x: ag.tmean(x, axis=-1), lambda r: r.normal(size=(2, 3, 4))),
    "softmax": _unary(lambda x: ag.softmax(x, axis=-1), lambda r: 2 * r.normal(size=(3, 5))),
    "softmax_axis0": _unary(lambda x: ag.softmax(x, axis=0), lambda r: 2 * r.normal(size=(4, 2))),
    "getitem": _getitem,
    "concat_stack": _concat_stack,
    "reshape_transpose": _reshape_transpose,
    "dense": _module(lambda rng: Dense(4, 3, rng), (5, 4)),
    "layer_norm": _module(lambda rng: LayerNorm(6), (3, 6)),
    "attention": _module(lambda rng: MultiHeadAttention(8, 2, rng), (2, 3, 8)),
    "mlp": _module(lambda rng: MLP((4, 6, 3), rng), (5, 4)),
    "bce_loss": _loss_bce,
    "entropy": _loss_entropy,
    "moe_ce": _moe_component("ce"),
    "moe_gating": _moe_component("gating"),
    "moe_weight": _moe_component("weight"),
    "moe_diversity": _moe_component("diversity"),
    "moe_total": _moe_component("total"),
}


def gradient_error(build, seed: int) -> float:
    rng = np.random.default_rng(seed)
    leaves, fn = build(rng)
    for leaf in leaves:
        leaf.grad = None
    fn().backward()
    analytic = [np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad for leaf in leaves]
    arrays = [leaf.data for leaf in leaves]
    numeric = oracles.finite_difference(lambda: fn().item(), arrays, FD_STEP)
    return oracles.relative_error(analytic, numeric)
