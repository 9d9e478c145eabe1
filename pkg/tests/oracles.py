"""Independent reference implementations used by the tests.

These are deliberately naive: per-voxel loops, pairwise enumeration,
bisection.  They share no code with the package beyond plain numpy.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np
from scipy import integrate

OFFSETS_26 = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
# one of each +/- pair
OFFSETS_13 = [o for o in OFFSETS_26 if o > (0, 0, 0)]


def _add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def voxel_bins(values, coords, bin_width):
    lo = min(values)
    return {tuple(int(c) for c in xyz): int(math.floor((v - lo) / bin_width)) + 1
            for v, xyz in zip(values, coords)}


def glcm(bins: dict) -> np.ndarray:
    ng = max(bins.values())
    m = np.zeros((ng, ng), dtype=np.int64)
    for v, a in bins.items():
        for o in OFFSETS_13:
            b = bins.get(_add(v, o))
            if b is not None:
                m[a - 1, b - 1] += 1
                m[b - 1, a - 1] += 1
    return m


def glrlm(bins: dict) -> np.ndarray:
    ng = max(bins.values())
    runs = []
    for o in OFFSETS_13:
        back = (-o[0], -o[1], -o[2])
        for v, a in bins.items():
            if bins.get(_add(v, back)) == a:
                continue  # not the start of a run
            length, cur = 1, _add(v, o)
            while bins.get(cur) == a:
                length += 1
                cur = _add(cur, o)
            runs.append((a, length))
    m = np.zeros((ng, max(r[1] for r in runs)), dtype=np.int64)
    for a, length in runs:
        m[a - 1, length - 1] += 1
    return m


def glszm(bins: dict) -> np.ndarray:
    ng = max(bins.values())
    seen, zones = set(), []
    for start in sorted(bins):
        if start in seen:
            continue
        level = bins[start]
        queue, size = deque([start]), 0
        seen.add(start)
        while queue:
            v = queue.popleft()
            size += 1
            for o in OFFSETS_26:
                w = _add(v, o)
                if w not in seen and bins.get(w) == level:
                    seen.add(w)
                    queue.append(w)
        zones.append((level, size))
    m = np.zeros((ng, max(z[1] for z in zones)), dtype=np.int64)
    for level, size in zones:
        m[level - 1, size - 1] += 1
    return m


def gldm(bins: dict) -> np.ndarray:
    ng = max(bins.values())
    m = np.zeros((ng, 27), dtype=np.int64)
    for v, a in bins.items():
        dep = sum(1 for o in OFFSETS_26 if bins.get(_add(v, o)) == a)
        m[a - 1, dep] += 1
    return m


def ngtdm(bins: dict) -> np.ndarray:
    ng = max(bins.values())
    n = np.zeros(ng)
    s = np.zeros(ng)
    for v in sorted(bins):
        a = bins[v]
        nb = [bins[w] for w in (_add(v, o) for o in OFFSETS_26) if w in bins]
        if not nb:
            continue
        n[a - 1] += 1
        s[a - 1] += abs(a - sum(nb) / len(nb))
    return np.stack([n, s], axis=1)


def pairwise_auc(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    halves = 0
    for p in pos:
        for q in neg:
            halves += 2 if p > q else (1 if p == q else 0)
    return (halves / 2.0) / (len(pos) * len(neg))


def simplex_projection(z, iters: int = 200) -> np.ndarray:
    """argmin ||w - z||^2 on the simplex via bisection on the threshold."""
    z = np.asarray(z, dtype=np.float64)
    lo, hi = z.min() - 1.0, z.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(z - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    w = np.maximum(z - 0.5 * (lo + hi), 0.0)
    return w


def t_two_sided_p(t: float, df: int) -> float:
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    density = lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2)  # noqa: E731
    tail, _ = integrate.quad(density, abs(t), np.inf, epsabs=1e-14, epsrel=1e-12)
    return 2.0 * tail


def pearson(x, y) -> float:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def adamw_trace(w0, grad_fn, lr, steps, wd=0.0, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-by-scalar AdamW with decoupled decay and bias correction."""
    w = [float(x) for x in w0]
    m = [0.0] * len(w)
    v = [0.0] * len(w)
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        for i in range(len(w)):
            w[i] = w[i] - lr * wd * w[i]
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            w[i] = w[i] - lr * mh / (math.sqrt(vh) + eps)
        out.append(list(w))
    return out


def finite_difference(f, arrays, h: float = 1e-6) -> list[np.ndarray]:
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            fp = f()
            a[idx] = orig - h
            fm = f()
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    """Global relative error over the concatenated gradient vectors."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def attention_loop(x, wq, bq, wk, bk, wv, bv, wo, bo, n_heads):
    """Per-batch, per-head, per-token attention with explicit loops."""
    b, t, d = x.shape
    dh = d // n_heads
    out = np.zeros_like(x)
    for bi in range(b):
        q = x[bi] @ wq.T + bq
        k = x[bi] @ wk.T + bk
        v = x[bi] @ wv.T + bv
        ctx = np.zeros((t, d))
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            for i in range(t):
                s = [float(q[i, sl] @ k[j, sl]) / math.sqrt(dh) for j in range(t)]
                mx = max(s)
                e = [math.exp(x_ - mx) for x_ in s]
                tot = sum(e)
                for j in range(t):
                    ctx[i, sl] += e[j] / tot * v[j, sl]
        out[bi] = ctx @ wo.T + bo
    return out
