"""Gating strategies: each maps expert state and/or a sample to weights on the simplex.

Strategy ids, in the fixed order used for tie-breaking:

    auc_softmax, auc_sigmoid, auc_sparsemax      validation AUC normalizations
    confidence, error, diversity                 prediction-behaviour gates
    magnitude, variance, entropy                 feature-vector gates
    learned_softmax, learned_sigmoid             trained gating networks

Sample-dependent gates return one weight row per sample; the others return a
single row that is broadcast.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .evaluation import auc
from .nn import autograd as ag
from .nn.layers import Dense, LayerNorm, Module, MultiHeadAttention
from .nn.losses import bce_loss, entropy
from .nn.train import TrainConfig, train_loop
from .stats import RandomStream, pearson

STATIC_IDS = ("auc_softmax", "auc_sigmoid", "auc_sparsemax", "confidence", "error", "diversity",
              "magnitude", "variance", "entropy")
LEARNED_IDS = ("learned_softmax", "learned_sigmoid")
STRATEGY_IDS = STATIC_IDS + LEARNED_IDS
SAMPLE_DEPENDENT = frozenset({"confidence", "magnitude", "variance", "entropy", *LEARNED_IDS})
ARCHITECTURES = ("mlp", "attention", "transformer")
ENTROPY_BINS = 20
GATE_WIDTH = 64
GATE_HEADS = 4
ENTROPY_LAMBDA = 0.01


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _finite(a, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite {what}")
    return a


# -- performance-based -------------------------------------------------------------------

def auc_softmax(aucs) -> np.ndarray:
    return softmax(_finite(aucs, "AUCs"))


def auc_sigmoid(aucs) -> np.ndarray:
    s = _sigmoid(_finite(aucs, "AUCs"))
    return s / s.sum(axis=-1, keepdims=True)


def sparsemax(z) -> np.ndarray:
    """Euclidean projection of ``z`` onto the probability simplex (last axis)."""
    z = _finite(z, "scores")
    zs = -np.sort(-z, axis=-1)
    k = np.arange(1, z.shape[-1] + 1)
    css = np.cumsum(zs, axis=-1)
    support = 1.0 + k * zs > css
    k_star = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(css, k_star - 1, axis=-1) - 1.0) / k_star
    return np.maximum(z - tau, 0.0)


def auc_sparsemax(aucs) -> np.ndarray:
    return sparsemax(aucs)


def confidence_gate(predictions) -> np.ndarray:
    return softmax(2.0 * np.abs(np.asarray(predictions, dtype=np.float64) - 0.5))


def error_gate(predictions, labels) -> np.ndarray:
    if labels is None:
        raise ValueError("error gate needs labels")
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.ndim == 2:
        y = y.reshape(-1, 1)
    return softmax(-np.abs(p - y))


def mean_correlations(val_predictions) -> np.ndarray:
    """rho_k: mean Pearson correlation of column k against every other column."""
    P = np.asarray(val_predictions, dtype=np.float64)
    n, k = P.shape
    if n < 3:
        raise ValueError("diversity gate needs at least 3 validation samples")
    rho = np.zeros(k)
    for i in range(k):
        rho[i] = np.mean([pearson(P[:, i], P[:, j]) for j in range(k) if j != i])
    return rho


def diversity_gate(val_predictions) -> np.ndarray:
    return softmax(1.0 - mean_correlations(val_predictions))


# -- feature-based ---------------------------------------------------------------------------

def magnitude_gate(features) -> np.ndarray:
    return softmax(np.linalg.norm(np.asarray(features, dtype=np.float64), axis=-1))


def variance_gate(features) -> np.ndarray:
    return softmax(np.var(np.asarray(features, dtype=np.float64), axis=-1))


def histogram_entropies(features, n_bins: int = ENTROPY_BINS) -> np.ndarray:
    """Entropy of each vector's histogram over its own [min, max] (last axis).

    A constant vector puts all its mass into one bin.
    """
    f = np.asarray(features, dtype=np.float64)
    lo = f.min(axis=-1, keepdims=True)
    hi = f.max(axis=-1, keepdims=True)
    span = hi - lo
    flat = span == 0
    idx = np.floor((f - lo) / np.where(flat, 1.0, span) * n_bins).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    idx = np.where(flat, 0, idx)
    onehot = idx[..., None] == np.arange(n_bins)
    p = onehot.sum(axis=-2) / f.shape[-1]
    return -np.sum(p * np.log(p + 1e-10), axis=-1)


def entropy_gate(features) -> np.ndarray:
    return softmax(histogram_entropies(features))


# -- learned gating networks -------------------------------------------------------------------

class LearnedGate(Module):
    """Gating network producing one logit per expert.

    ``mlp`` reads the mean of the experts' feature vectors; ``attention`` and
    ``transformer`` read the experts' feature vectors as a token sequence and
    score each token with a shared head.  The last layer starts at zero, so
    an untrained gate is uniform.
    """

    def __init__(self, architecture: str, input_dim: int, n_experts: int, rng: RandomStream,
                 normalization: str = "softmax", width: int = GATE_WIDTH, heads: int = GATE_HEADS):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown gate architecture {architecture!r}")
        if normalization not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown normalization {normalization!r}")
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        self.architecture = architecture
        self.normalization = normalization
        self.n_experts = n_experts
        if architecture == "mlp":
            self.fc1 = Dense(input_dim, 64, rng)
            self.fc2 = Dense(64, 32, rng)
            self.head = Dense(32, n_experts, rng, zero=True)
            return
        self.proj = Dense(input_dim, width, rng)
        self.attn = MultiHeadAttention(width, heads, rng)
        self.ff1 = Dense(width, width, rng)
        if architecture == "transformer":
            self.ff2 = Dense(width, width, rng)
            self.norm0 = LayerNorm(width)
            self.norm1 = LayerNorm(width)
            self.norm2 = LayerNorm(width)
        self.head = Dense(width, 1, rng, zero=True)

    def forward(self, phi):
        """(batch, n_experts, d) features -> (batch, n_experts) logits."""
        x = ag.as_tensor(phi)
        b = x.shape[0]
        if self.architecture == "mlp":
            h = ag.relu(self.fc1(x.mean(axis=1)))
            h = ag.relu(self.fc2(h))
            return self.head(h)
        if self.architecture == "attention":
            h = self.attn(self.proj(x))
            h = ag.relu(self.ff1(h))
        else:
            h = self.norm0(self.proj(x))
            h = self.norm1(h + self.attn(h))
            h = self.norm2(h + self.ff2(ag.relu(self.ff1(h))))
        return self.head(h).reshape(b, self.n_experts)

    def weights(self, phi) -> ag.Tensor:
        return normalize_learned(self.forward(phi), self.normalization)


def build_learned_gate(architecture: str, input_dim: int, n_experts: int = 7, seed: int = 42,
                       normalization: str = "softmax") -> LearnedGate:
    rng = RandomStream(seed).child("gate", architecture)
    return LearnedGate(architecture, input_dim, n_experts, rng, normalization)


def normalize_learned(z, mode: str = "softmax"):
    """softmax(z) or sigmoid(z_k) / sum_j sigmoid(z_j); Tensor in, Tensor out.

    The sigmoid ratio is evaluated as softmax(log sigmoid(z)), which stays
    finite when every sigmoid underflows.
    """
    if isinstance(z, ag.Tensor):
        if mode == "softmax":
            return ag.softmax(z, axis=-1)
        if mode == "sigmoid":
            return ag.softmax(-ag.softplus(-z), axis=-1)
    else:
        z = np.asarray(z, dtype=np.float64)
        if mode == "softmax":
            return softmax(z)
        if mode == "sigmoid":
            return softmax(-np.logaddexp(0.0, -z))
    raise ValueError(f"unknown normalization {mode!r}")


def gate_loss(gate: LearnedGate, probs, phi, labels, lam: float = ENTROPY_LAMBDA):
    """BCE of the gated ensemble plus ``lam`` times the mean gate entropy."""
    g = gate.weights(phi)
    pred = (g * probs).sum(axis=-1)
    return bce_loss(pred, labels) + lam * entropy(g).mean()


def _inner_split(patient_ids, seed: int) -> tuple[np.ndarray, np.ndarray]:
    uniq = list(dict.fromkeys(patient_ids))
    order = RandomStream(seed).child("gate-inner-split").permutation(len(uniq))
    fit = {uniq[i] for i in order[: (len(uniq) + 1) // 2]}
    mask = np.array([p in fit for p in patient_ids])
    if mask.all() or not mask.any():
        mask = np.ones(len(patient_ids), dtype=bool)
        return np.flatnonzero(mask), np.flatnonzero(mask)
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def train_learned_gate(gate: LearnedGate, probs, phi, labels, patient_ids=None,
                       config: TrainConfig | None = None, lam: float = ENTROPY_LAMBDA):
    """Fit the gate on frozen expert outputs.

    The samples are split 50/50 by patient; the first half trains, the second
    drives early stopping.
    """
    config = config or TrainConfig()
    probs = np.asarray(probs, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape[0] == 0:
        raise ValueError("empty gating training set")
    if patient_ids is None:
        patient_ids = [str(i) for i in range(len(labels))]
    fit, stop = _inner_split(list(patient_ids), config.seed)

    def loss_fn(model, batch):
        p, f, y = batch
        return gate_loss(model, p, f, y, lam)

    data = (probs, phi, labels)
    return train_loop(gate, tuple(a[fit] for a in data), tuple(a[stop] for a in data), config, loss_fn)


# -- fitting every strategy on a validation context ----------------------------------------------

@dataclass
class FeatureScaler:
    """Per-expert, per-dimension standardization of expert feature vectors."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, phi) -> "FeatureScaler":
        phi = np.asarray(phi, dtype=np.float64)
        sd = phi.std(axis=0)
        return cls(phi.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def __call__(self, phi) -> np.ndarray:
        return (np.asarray(phi, dtype=np.float64) - self.mean) / self.scale


@dataclass
class GatingContext:
    val_aucs: np.ndarray          # (K,)
    predictions: np.ndarray       # (n, K)
    features: np.ndarray          # (n, K, d), already standardized
    labels: np.ndarray | None = None
    patient_ids: Sequence[str] | None = None

    def __post_init__(self):
        self.val_aucs = np.asarray(self.val_aucs, dtype=np.float64)
        self.predictions = np.asarray(self.predictions, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        k = self.val_aucs.size
        if np.any((self.val_aucs < 0) | (self.val_aucs > 1)):
            raise ValueError("validation AUCs must lie in [0, 1]")
        if self.predictions.ndim != 2 or self.predictions.shape[1] != k:
            raise ValueError(f"prediction matrix must have {k} columns")
        if self.features.shape[:2] != self.predictions.shape:
            raise ValueError("features must be (n, K, d) matching the predictions")


@dataclass
class FittedGate:
    """A strategy frozen on validation data and applicable to new samples."""

    strategy: str
    static: np.ndarray | None = None
    fn: Callable | None = field(default=None, repr=False)
    net: LearnedGate | None = field(default=None, repr=False)

    @property
    def sample_dependent(self) -> bool:
        return self.static is None

    def weights(self, predictions, features) -> np.ndarray:
        n = np.asarray(predictions).shape[0]
        if self.static is not None:
            return np.broadcast_to(self.static, (n, self.static.size)).copy()
        if self.net is not None:
            return self.net.weights(features).data
        return self.fn(predictions, features)


def fit_static_gates(ctx: GatingContext, strategies=STATIC_IDS) -> dict[str, FittedGate]:
    out = {}
    for s in strategies:
        if s == "auc_softmax":
            out[s] = FittedGate(s, static=auc_softmax(ctx.val_aucs))
        elif s == "auc_sigmoid":
            out[s] = FittedGate(s, static=auc_sigmoid(ctx.val_aucs))
        elif s == "auc_sparsemax":
            out[s] = FittedGate(s, static=auc_sparsemax(ctx.val_aucs))
        elif s == "confidence":
            out[s] = FittedGate(s, fn=lambda p, f: confidence_gate(p))
        elif s == "error":
            out[s] = FittedGate(s, static=error_gate(ctx.predictions, ctx.labels).mean(axis=0))
        elif s == "diversity":
            out[s] = FittedGate(s, static=diversity_gate(ctx.predictions))
        elif s == "magnitude":
            out[s] = FittedGate(s, fn=lambda p, f: magnitude_gate(f))
        elif s == "variance":
            out[s] = FittedGate(s, fn=lambda p, f: variance_gate(f))
        elif s == "entropy":
            out[s] = FittedGate(s, fn=lambda p, f: entropy_gate(f))
        else:
            raise ValueError(f"unknown static strategy {s!r}")
    return out


def fit_learned_gates(ctx: GatingContext, architecture: str, config: TrainConfig,
                      strategies=LEARNED_IDS) -> dict[str, FittedGate]:
    out = {}
    for s in strategies:
        mode = s.split("_", 1)[1]
        net = build_learned_gate(architecture, ctx.features.shape[2], ctx.val_aucs.size,
                                 seed=config.seed, normalization=mode)
        train_learned_gate(net, ctx.predictions, ctx.features, ctx.labels, ctx.patient_ids, config)
        out[s] = FittedGate(s, net=net)
    return out


def ensemble_scores(gate: FittedGate, predictions, features) -> np.ndarray:
    w = gate.weights(predictions, features)
    return np.sum(w * predictions, axis=1)


def select_best_strategy(candidates: Sequence[tuple[str, float]]) -> tuple[str, float]:
    """Highest validation AUC; exact ties go to the earliest candidate."""
    if not candidates:
        raise ValueError("no gating candidates")
    best = candidates[0]
    for c in candidates[1:]:
        if c[1] > best[1]:
            best = c
    return best


def write_gating_report(path, rows: list[tuple[int, str, float, np.ndarray]], n_experts: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "strategy", "val_auc", *(f"w{i + 1}" for i in range(n_experts))])
        for fold, strategy, val_auc, weights in rows:
            w.writerow([fold, strategy, repr(float(val_auc)), *map(repr, np.asarray(weights, dtype=float).tolist())])


def read_gating_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def evaluate_strategies(ctx: GatingContext, architecture: str, config: TrainConfig,
                        strategies=STRATEGY_IDS) -> tuple[dict[str, FittedGate], dict[str, float]]:
    """Fit every requested strategy on the validation context and score it there."""
    gates = fit_static_gates(ctx, [s for s in strategies if s in STATIC_IDS])
    learned = [s for s in strategies if s in LEARNED_IDS]
    if learned:
        gates.update(fit_learned_gates(ctx, architecture, config, learned))
    scores = {s: auc(ensemble_scores(gates[s], ctx.predictions, ctx.features), ctx.labels)
              for s in strategies}
    return gates, scores

