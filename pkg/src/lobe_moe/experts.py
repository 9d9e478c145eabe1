"""Regional experts: boosted stumps on radiomics and small MLPs on pooled voxels.

Every expert exposes the same hook used by gating: a probability per scan and
a feature vector phi per scan (the radiomics row for boosted experts, the
penultimate activations for MLP experts).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core_data import Cohort, RegionId, RegionMask, Volume3D
from .evaluation import FoldSplit, auc
from .nn import autograd as ag
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import MLP
from .nn.losses import PROB_EPS, bce_loss
from .nn.train import TrainConfig, train_loop
from .radiomics.schema import FEATURE_NAMES, SCHEMA_ID
from .stats import RandomStream

KINDS = ("boosted_radiomics", "mlp_pooled")

HIST_BINS = 16
HIST_RANGE = (-1100.0, 300.0)
DESCRIPTOR_NAMES = ("mean", "variance", *(f"hist{i:02d}" for i in range(HIST_BINS)), "occupied_fraction")
DESCRIPTOR_ID = "pooled-hu-v1"
MLP_SIZES = (len(DESCRIPTOR_NAMES), 32, 16, 1)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


# -- pooled descriptor -----------------------------------------------------------

def pool_voxels(values: np.ndarray, n_total: int) -> np.ndarray:
    """19-vector: mean, variance, 16-bin HU histogram fractions, occupied fraction.

    The histogram spans a fixed HU window; values outside it land in the end
    bins.  An empty region gives the zero vector.
    """
    out = np.zeros(len(DESCRIPTOR_NAMES))
    if values.size == 0:
        return out
    v = values.astype(np.float64)
    out[0] = v.mean()
    out[1] = v.var()
    lo, hi = HIST_RANGE
    counts, _ = np.histogram(np.clip(v, lo, hi), bins=HIST_BINS, range=HIST_RANGE)
    out[2:2 + HIST_BINS] = counts / v.size
    out[-1] = v.size / n_total
    return out


def pooled_descriptor(volume: Volume3D, mask: RegionMask, region: RegionId | None) -> np.ndarray:
    """Descriptor of one region, or of the whole volume when ``region`` is None."""
    vox = volume.voxels
    if region is None:
        return pool_voxels(vox.ravel(), vox.size)
    return pool_voxels(vox[mask.region(region)], vox.size)


def _descriptor_task(args):
    cohort, index, regions = args
    vol, mask = cohort.load_scan(cohort.records[index])
    rows = [pooled_descriptor(vol, mask, r) for r in regions]
    rows.append(pooled_descriptor(vol, mask, None))
    return rows


def describe_cohort(cohort: Cohort, regions, jobs: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Region descriptors (n_scans, n_regions, 19) and whole-volume descriptors (n_scans, 19)."""
    tasks = [(cohort, i, tuple(regions)) for i in range(len(cohort))]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_descriptor_task, tasks, chunksize=4))
    else:
        rows = [_descriptor_task(t) for t in tasks]
    arr = np.array(rows, dtype=np.float64)
    return arr[:, :-1, :], arr[:, -1, :]


# -- per-scan inputs shared by all stages -------------------------------------------

@dataclass
class ScanTable:
    """Per-scan model inputs for one cohort, in manifest order."""

    scan_ids: tuple[str, ...]
    patient_ids: tuple[str, ...]
    labels: np.ndarray
    regions: tuple[RegionId, ...]
    radiomics: np.ndarray      # (n, K, 39)
    descriptors: np.ndarray    # (n, K, 19)
    global_descriptors: np.ndarray  # (n, 19)

    def __post_init__(self):
        n, k = len(self.scan_ids), len(self.regions)
        if self.radiomics.shape[:2] != (n, k) or self.descriptors.shape[:2] != (n, k):
            raise ValueError("scan table arrays disagree with scan ids / regions")

    @classmethod
    def from_cohort(cls, cohort: Cohort, regions, radiomics, descriptors, global_descriptors):
        return cls(tuple(r.scan_id for r in cohort.records),
                   tuple(r.patient_id for r in cohort.records),
                   np.array([r.label for r in cohort.records], dtype=np.int64),
                   tuple(regions), np.asarray(radiomics, dtype=np.float64),
                   np.asarray(descriptors, dtype=np.float64),
                   np.asarray(global_descriptors, dtype=np.float64))

    def rows_for(self, patients) -> np.ndarray:
        wanted = set(patients)
        return np.array([i for i, p in enumerate(self.patient_ids) if p in wanted], dtype=np.int64)

    def inputs(self, kind: str, region_index: int, rows) -> np.ndarray:
        if kind == "boosted_radiomics":
            return self.radiomics[rows, region_index]
        if kind == "mlp_pooled":
            return self.descriptors[rows, region_index]
        raise ValueError(f"unknown expert kind {kind!r}")


# -- boosted stumps -----------------------------------------------------------------

@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    left: float
    right: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.threshold, self.left, self.right)):
            raise ValueError("stump threshold and leaves must be finite")

    def output(self, X: np.ndarray) -> np.ndarray:
        return np.where(X[:, self.feature] <= self.threshold, self.left, self.right)


@dataclass
class BoostedModel:
    base_logit: float
    stumps: list[Stump] = field(default_factory=list)

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        z = np.full(X.shape[0], self.base_logit)
        for s in self.stumps:
            z = z + s.output(X)
        return z

    def predict_proba(self, X) -> np.ndarray:
        return clamp_prob(_sigmoid(self.decision(X)))

    def to_text(self) -> str:
        lines = [f"BOOST1 {self.base_logit!r} {len(self.stumps)}"]
        lines += [f"STUMP {s.feature} {s.threshold!r} {s.left!r} {s.right!r}" for s in self.stumps]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BoostedModel":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("BOOST1 "):
            raise ValueError("not a BOOST1 model")
        _, base, n = lines[0].split()
        stumps = []
        for ln in lines[1:]:
            tag, f, t, l, r = ln.split()
            if tag != "STUMP":
                raise ValueError(f"unexpected record {tag!r}")
            stumps.append(Stump(int(f), float(t), float(l), float(r)))
        if len(stumps) != int(n):
            raise ValueError(f"expected {n} stumps, found {len(stumps)}")
        return cls(float(base), stumps)


def _best_split(Xs: np.ndarray, order: np.ndarray, r: np.ndarray):
    """Best (feature, threshold, left mean, right mean) by squared error, or None.

    For each feature the residuals are accumulated in sorted order, so every
    midpoint between distinct values is scored in one pass.  Ties go to the
    lowest feature index, then the lowest threshold.
    """
    n, d = Xs.shape
    total = r.sum()
    best = None
    best_gain = -np.inf
    for j in range(d):
        xs = Xs[:, j]
        rs = r[order[:, j]]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        csum = np.cumsum(rs)[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        gain = csum * csum / nl + (total - csum) ** 2 / nr
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best_gain + 1e-12 * max(1.0, abs(best_gain)):
            best_gain = gain[i]
            thr = 0.5 * (xs[i] + xs[i + 1])
            left_mean = csum[i] / nl[i]
            right_mean = (total - csum[i]) / nr[i]
            best = (j, float(thr), float(left_mean), float(right_mean))
    return best


def train_boosted(X, y, rounds: int = 100, shrinkage: float = 0.1) -> BoostedModel:
    """Gradient boosting of depth-1 stumps on logistic loss.

    Each round fits a stump to the negative gradient y - p by squared error;
    leaves are the residual means scaled by the shrinkage.  The model starts
    from the prior log-odds.  Constant features yield no candidate split and
    leave the model at the base rate.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, d) with one label per row")
    if y.min() == y.max():
        raise ValueError("boosting needs both classes in the training labels")
    model = BoostedModel(_logit(float(y.mean())))
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    z = np.full(y.size, model.base_logit)
    for _ in range(rounds):
        r = y - _sigmoid(z)
        split = _best_split(Xs, order, r)
        if split is None:
            break
        j, thr, lm, rm = split
        stump = Stump(j, thr, shrinkage * lm, shrinkage * rm)
        model.stumps.append(stump)
        z = z + stump.output(X)
    return model


# -- MLP expert ------------------------------------------------------------------------

class PooledMLP:
    """19 -> 32 -> 16 -> 1 network with input standardization baked in."""

    def __init__(self, rng: RandomStream, mean=None, scale=None):
        self.net = MLP(MLP_SIZES, rng)
        self.mean = np.zeros(MLP_SIZES[0]) if mean is None else np.asarray(mean, dtype=np.float64)
        self.scale = np.ones(MLP_SIZES[0]) if scale is None else np.asarray(scale, dtype=np.float64)

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def forward_std(self, Xs):
        logit, hidden = self.net.forward(Xs, return_hidden=True)
        return ag.sigmoid(logit.reshape(-1)), hidden

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        prob, hidden = self.forward_std(self.standardize(X))
        return clamp_prob(prob.data), hidden.data

    def state(self) -> dict[str, np.ndarray]:
        out = {f"net.{k}": v for k, v in self.net.state_dict().items()}
        out["input.mean"] = self.mean
        out["input.scale"] = self.scale
        return out

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "PooledMLP":
        m = cls(RandomStream(0), state["input.mean"], state["input.scale"])
        m.net.load_state_dict({k[4:]: v for k, v in state.items() if k.startswith("net.")})
        return m


def fit_standardizer(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def _auc_metric(model_fn):
    def metric(model, data):
        X, y = data
        prob, _ = model_fn(X)
        if y.min() == y.max():
            return 0.0
        return auc(prob.data, y)
    return metric


def train_pooled_mlp(X_train, y_train, X_val, y_val, config: TrainConfig) -> PooledMLP:
    mean, scale = fit_standardizer(X_train)
    model = PooledMLP(RandomStream(config.seed).child("mlp-init"), mean, scale)
    tr = (model.standardize(X_train), np.asarray(y_train, dtype=np.float64))
    va = (model.standardize(X_val), np.asarray(y_val, dtype=np.float64))

    def loss_fn(net, batch):
        Xb, yb = batch
        prob, _ = model.forward_std(Xb)
        return bce_loss(prob, yb, label_smoothing=config.label_smoothing)

    train_loop(model.net, tr, va, config, loss_fn, metric_fn=_auc_metric(model.forward_std))
    return model


# -- expert model ------------------------------------------------------------------------

@dataclass
class ExpertOutput:
    probability: np.ndarray   # (n,)
    features: np.ndarray      # (n, d)


@dataclass
class ExpertConfig:
    rounds: int = 100
    shrinkage: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class ExpertModel:
    region: RegionId
    kind: str
    model: BoostedModel | PooledMLP
    validation_auc: float
    schema: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown expert kind {self.kind!r}")
        if not 0.0 <= self.validation_auc <= 1.0:
            raise ValueError("validation_auc must lie in [0, 1]")

    @property
    def input_dim(self) -> int:
        return len(FEATURE_NAMES) if self.kind == "boosted_radiomics" else len(DESCRIPTOR_NAMES)

    @property
    def feature_dim(self) -> int:
        return len(FEATURE_NAMES) if self.kind == "boosted_radiomics" else MLP_SIZES[-2]


def predict(expert: ExpertModel, X) -> ExpertOutput:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != expert.input_dim:
        raise ValueError(f"schema mismatch: {expert.kind} expert expects {expert.input_dim} "
                         f"inputs ({expert.schema}), got {X.shape[1]}")
    if expert.kind == "boosted_radiomics":
        return ExpertOutput(expert.model.predict_proba(X), X.copy())
    prob, hidden = expert.model.predict(X)
    return ExpertOutput(prob, hidden)


def train_expert(kind: str, region: RegionId, X_train, y_train, X_val, y_val,
                 config: ExpertConfig) -> ExpertModel:
    y_train = np.asarray(y_train)
    y_val = np.asarray(y_val)
    if kind == "boosted_radiomics":
        model = train_boosted(X_train, y_train, config.rounds, config.shrinkage)
        schema = SCHEMA_ID
    elif kind == "mlp_pooled":
        train_cfg = config.train.with_(seed=RandomStream(config.train.seed).child(region.value).state)
        model = train_pooled_mlp(X_train, y_train, X_val, y_val, train_cfg)
        schema = DESCRIPTOR_ID
    else:
        raise ValueError(f"unknown expert kind {kind!r}")
    expert = ExpertModel(region, kind, model, 0.0, schema)
    expert.validation_auc = auc(predict(expert, X_val).probability, y_val)
    return expert


def train_all_regions(table: ScanTable, split: FoldSplit, kind: str,
                      config: ExpertConfig) -> list[ExpertModel]:
    """One expert per region trained on the fold's train patients.

    Validation AUC comes from the fold's validation patients; test patients
    are never touched here.
    """
    train_rows = table.rows_for(split.train)
    val_rows = table.rows_for(split.val)
    if set(table.patient_ids[i] for i in train_rows) & set(table.patient_ids[i] for i in val_rows):
        raise AssertionError("patient overlap between expert training and validation")
    out = []
    for k, region in enumerate(table.regions):
        out.append(train_expert(kind, region, table.inputs(kind, k, train_rows), table.labels[train_rows],
                                table.inputs(kind, k, val_rows), table.labels[val_rows], config))
    return out


def region_outputs(experts: list[ExpertModel], table: ScanTable, rows) -> tuple[np.ndarray, np.ndarray]:
    """Stacked probabilities (n, K) and features (n, K, d) for the given rows."""
    probs, feats = [], []
    for k, e in enumerate(experts):
        o = predict(e, table.inputs(e.kind, k, rows))
        probs.append(o.probability)
        feats.append(o.features)
    return np.stack(probs, axis=1), np.stack(feats, axis=1)


# -- persistence -----------------------------------------------------------------------------

def expert_filename(expert: ExpertModel) -> str:
    ext = "boost" if expert.kind == "boosted_radiomics" else "ckpt"
    return f"{expert.kind}_{expert.region.value}.{ext}"


def save_expert(path, expert: ExpertModel) -> None:
    if expert.kind == "boosted_radiomics":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(expert.model.to_text())
    else:
        save_checkpoint(path, expert.model.state())


def load_expert(path, kind: str, region: RegionId, validation_auc: float) -> ExpertModel:
    if kind == "boosted_radiomics":
        with open(path, encoding="utf-8") as fh:
            model = BoostedModel.from_text(fh.read())
        return ExpertModel(region, kind, model, validation_auc, SCHEMA_ID)
    return ExpertModel(region, kind, PooledMLP.from_state(load_checkpoint(path)), validation_auc, DESCRIPTOR_ID)


def write_predictions_csv(path, rows: list[tuple[str, str, str, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan_id", "region", "kind", "probability"])
        for scan_id, region, kind, p in rows:
            w.writerow([scan_id, region, kind, repr(float(p))])
