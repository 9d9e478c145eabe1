"""Weighted ensembling, hierarchical weight normalization and the end-to-end MoE head."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core_data import RegionId
from .nn import autograd as ag
from .nn.layers import Dense, Module, Parameter
from .nn.losses import bce_loss
from .nn.optim import AdamW, clip_grad_norm, cosine_anneal
from .stats import RandomStream

SUM_TOL = 1e-6
GATING_EPS = 1e-8


@dataclass(frozen=True)
class EnsemblePrediction:
    probability: np.ndarray     # (n,)
    contributions: np.ndarray   # (n, K), rows sum to probability


def weighted_ensemble(predictions, weights) -> EnsemblePrediction:
    """y = sum_k w_k y_k.  ``weights`` is one row (K,) or one row per sample (n, K)."""
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > SUM_TOL):
        raise ValueError("weights must be nonnegative and sum to 1")
    contrib = p * w
    return EnsemblePrediction(contrib.sum(axis=1), contrib)


def val_auc_weights(aucs) -> np.ndarray:
    a = np.asarray(aucs, dtype=np.float64)
    total = a.sum()
    if not total > 0:
        raise ValueError("validation AUCs sum to zero")
    return a / total


def hierarchical_normalize(weights) -> tuple[np.ndarray, np.ndarray]:
    """Renormalize the five lobe weights and the two lung weights separately."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size != 7:
        raise ValueError("hierarchical normalization needs 7 weights (5 lobes + 2 lungs)")
    lobes, lungs = w[:5], w[5:]
    if not lobes.sum() > 0 or not lungs.sum() > 0:
        raise ValueError("zero group sum")
    return lobes / lobes.sum(), lungs / lungs.sum()


def stage4_initial_weights(weights) -> np.ndarray:
    """Starting w for the MoE head: hierarchical halves in 7-region mode, else as given."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 7:
        lobes, lungs = hierarchical_normalize(w)
        return np.concatenate([lobes, lungs]) / 2.0
    return w / w.sum()


def _inv_softplus(x: np.ndarray) -> np.ndarray:
    return x + np.log(-np.expm1(-x))


# -- Stage 4 ------------------------------------------------------------------------------

@dataclass(frozen=True)
class MoEConfig:
    global_dim: int = 32
    expert_dim: int = 64
    hidden_dim: int = 32
    lambda_gating: float = 0.005
    lambda_weight: float = 0.005
    lambda_diversity: float = 0.01
    lr_backbone: float = 1e-5
    lr_head: float = 1e-4
    weight_decay: float = 1e-4
    max_epochs: int = 100
    early_stop_patience: int = 15
    batch_size: int = 16
    grad_clip_max_norm: float = 1.0
    seed: int = 42

    def with_(self, **kw) -> "MoEConfig":
        return replace(self, **kw)


class MoEHead(Module):
    """Toy backbone plus per-region extractors, attention logits and a classifier.

    The backbone maps the whole-volume descriptor to the global feature.
    Each region extractor maps its masked descriptor to phi_k and a scalar
    alpha_k = sigmoid(a_k . phi_k + c_k).  The gate is g_k = w_k alpha_k
    renormalized, with w = softplus(u) / sum softplus(u).
    """

    def __init__(self, n_regions: int, descriptor_dim: int, initial_w, config: MoEConfig):
        rng = RandomStream(config.seed).child("moe-head")
        self.n_regions = n_regions
        self.backbone = Dense(descriptor_dim, config.global_dim, rng)
        self.extractors = [Dense(descriptor_dim, config.expert_dim, rng) for _ in range(n_regions)]
        self.attention = [Dense(config.expert_dim, 1, rng) for _ in range(n_regions)]
        self.fc = Dense(config.global_dim + config.expert_dim, config.hidden_dim, rng)
        self.out = Dense(config.hidden_dim, 1, rng)
        w0 = np.maximum(np.asarray(initial_w, dtype=np.float64), 1e-6)
        w0 = w0 / w0.sum()
        if w0.size != n_regions:
            raise ValueError(f"initial weights have {w0.size} entries for {n_regions} regions")
        self.u = Parameter(_inv_softplus(w0), name="u")

    def backbone_parameters(self) -> list[Parameter]:
        return self.backbone.parameters()

    def head_parameters(self) -> list[Parameter]:
        ids = {id(p) for p in self.backbone_parameters()}
        return [p for p in self.parameters() if id(p) not in ids]

    def expert_weights(self) -> ag.Tensor:
        s = ag.softplus(self.u)
        return s / s.sum()

    def forward(self, global_desc, region_desc):
        """Returns (probability (n,), gate g (n, K), phi (n, K, d), w (K,))."""
        glob = ag.relu(self.backbone(global_desc))
        phis, alphas = [], []
        for k in range(self.n_regions):
            phi_k = ag.relu(self.extractors[k](region_desc[:, k, :]))
            phis.append(phi_k)
            alphas.append(ag.sigmoid(self.attention[k](phi_k)))
        phi = ag.stack(phis, axis=1)
        alpha = ag.concat(alphas, axis=1)
        w = self.expert_weights()
        raw = alpha * w
        g = raw / raw.sum(axis=1, keepdims=True)
        phi_expert = (phi * g.reshape(g.shape[0], self.n_regions, 1)).sum(axis=1)
        h = ag.relu(self.fc(ag.concat([glob, phi_expert], axis=1)))
        prob = ag.sigmoid(self.out(h)).reshape(-1)
        return prob, g, phi, w


def moe_forward(head: MoEHead, global_desc, region_desc):
    return head.forward(global_desc, region_desc)


def mean_abs_cosine(phi) -> ag.Tensor:
    """(1/K^2) sum_{i != j} |cos(phi_i, phi_j)| over batch-mean expert features.

    ``phi`` is (n, K, d) or already (K, d).  A zero vector has cosine 0 with
    everything.
    """
    phi = ag.as_tensor(phi)
    m = phi.mean(axis=0) if phi.ndim == 3 else phi
    k = m.shape[0]
    sq = (m * m).sum(axis=1)
    zero = sq.data == 0
    norms = ag.sqrt(sq + zero.astype(np.float64))
    unit = m / norms.reshape(k, 1)
    cos = ag.matmul(unit, ag.transpose(unit))
    off = (1.0 - np.eye(k)) * ~(zero[:, None] | zero[None, :])
    return (ag.tabs(cos) * off).sum() * (1.0 / (k * k))


@dataclass
class MoELosses:
    ce: ag.Tensor
    gating: ag.Tensor
    weight: ag.Tensor
    diversity: ag.Tensor
    total: ag.Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("ce", "gating", "weight", "diversity", "total")}


def moe_losses(prob, labels, w, phi, config: MoEConfig = MoEConfig()) -> MoELosses:
    """Cross-entropy, weight entropy, distance of w from uniform, feature diversity."""
    w = ag.as_tensor(w)
    k = w.shape[-1]
    ce = bce_loss(prob, labels)
    gating = -(w * ag.log(w + GATING_EPS)).sum()
    diff = w - 1.0 / k
    weight = (diff * diff).sum()
    diversity = mean_abs_cosine(phi)
    total = (ce + config.lambda_gating * gating + config.lambda_weight * weight
             + config.lambda_diversity * diversity)
    return MoELosses(ce, gating, weight, diversity, total)


@dataclass
class MoEData:
    global_desc: np.ndarray    # (n, 19)
    region_desc: np.ndarray    # (n, K, 19)
    labels: np.ndarray

    def take(self, idx) -> "MoEData":
        return MoEData(self.global_desc[idx], self.region_desc[idx], self.labels[idx])

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class MoEStandardizer:
    g_mean: np.ndarray
    g_scale: np.ndarray
    r_mean: np.ndarray
    r_scale: np.ndarray

    @classmethod
    def fit(cls, data: MoEData) -> "MoEStandardizer":
        def f(a, axis):
            sd = a.std(axis=axis)
            return a.mean(axis=axis), np.where(sd > 0, sd, 1.0)
        gm, gs = f(data.global_desc, 0)
        rm, rs = f(data.region_desc, 0)
        return cls(gm, gs, rm, rs)

    def __call__(self, data: MoEData) -> MoEData:
        return MoEData((data.global_desc - self.g_mean) / self.g_scale,
                       (data.region_desc - self.r_mean) / self.r_scale, data.labels)


@dataclass
class MoEHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def _evaluate(head: MoEHead, data: MoEData, config: MoEConfig) -> tuple[MoELosses, float]:
    prob, g, phi, w = head(data.global_desc, data.region_desc)
    losses = moe_losses(prob, data.labels, w, phi, config)
    return losses, -losses.total.item()


def train_moe(head: MoEHead, train: MoEData, val: MoEData, config: MoEConfig) -> MoEHistory:
    """Joint AdamW optimisation with separate backbone and head rates on a cosine schedule.

    Records the four loss components per epoch; keeps the parameters of the
    epoch with the lowest validation total loss.
    """
    opt = AdamW([(head.backbone_parameters(), config.lr_backbone),
                 (head.head_parameters(), config.lr_head)], weight_decay=config.weight_decay)
    rng = RandomStream(config.seed).child("moe-batches")
    history = MoEHistory()
    best_metric = -math.inf
    best_state = head.state_dict()
    stale = 0
    n = len(train)
    for epoch in range(1, config.max_epochs + 1):
        opt.set_scale(cosine_anneal(epoch - 1, config.max_epochs, 1.0))
        order = rng.permutation(n)
        sums = {"ce": 0.0, "gating": 0.0, "weight": 0.0, "diversity": 0.0, "total": 0.0}
        for start in range(0, n, config.batch_size):
            b = train.take(order[start:start + config.batch_size])
            head.zero_grad()
            prob, g, phi, w = head(b.global_desc, b.region_desc)
            losses = moe_losses(prob, b.labels, w, phi, config)
            losses.total.backward()
            clip_grad_norm(opt.params(), config.grad_clip_max_norm)
            opt.step()
            for key, v in losses.values().items():
                sums[key] += v * len(b)
        val_losses, metric = _evaluate(head, val, config)
        record = {f"train_{k}": v / n for k, v in sums.items()}
        record.update({f"val_{k}": v for k, v in val_losses.values().items()})
        record["epoch"] = epoch
        record["val_metric"] = metric
        history.epochs.append(record)
        if metric > best_metric:
            best_metric, best_state, history.best_epoch, stale = metric, head.state_dict(), epoch, 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    head.load_state_dict(best_state)
    return history


def write_moew(path, w) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("MOEW1 " + " ".join(repr(float(v)) for v in w) + "\n")


def read_moew(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        parts = fh.read().split()
    if not parts or parts[0] != "MOEW1":
        raise ValueError(f"{path}: not a MOEW1 record")
    return np.array([float(v) for v in parts[1:]])


def write_stage4_csv(path, rows: list[tuple[int, str, float, np.ndarray]], n_regions: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["fold", "init_strategy", "test_auc", *(f"final_w{i + 1}" for i in range(n_regions))])
        for fold, init, test_auc, w in rows:
            wr.writerow([fold, init, repr(float(test_auc)), *map(repr, np.asarray(w, dtype=float).tolist())])


def basal_mass(g: np.ndarray, regions) -> tuple[float, float]:
    """Mean gate mass on the lower lobes and on {RUL, RML}."""
    idx = {r: i for i, r in enumerate(regions)}
    lower = g[:, [idx[RegionId.LLL], idx[RegionId.RLL]]].sum(axis=1).mean()
    upper = g[:, [idx[RegionId.RUL], idx[RegionId.RML]]].sum(axis=1).mean()
    return float(lower), float(upper)
