"""AUC, patient-level cross-validation and fold statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .core_data import Cohort
from .stats import RandomStream


class LeakageError(RuntimeError):
    pass


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks, so tied scores earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_or_nan(scores, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0 or labels.min() == labels.max():
        return float("nan")
    return auc(scores, labels)


# -- cross-validation -------------------------------------------------------------

@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class CvPlan:
    folds: tuple[FoldSplit, ...]
    seed: int


def make_cv_plan(cohort: Cohort, n_folds: int = 5, seed: int = 42) -> CvPlan:
    """Patient-level folds, stratified by patient label.

    Positives and negatives are shuffled separately and dealt round-robin
    into ``n_folds`` holdout groups; each group alternates its members
    between validation and test.  The remaining patients form the fold's
    training set.
    """
    patients = cohort.patients
    if len(patients) < 2 * n_folds:
        raise ValueError(f"too few patients: need at least {2 * n_folds}, got {len(patients)}")
    rng = RandomStream(seed).child("cv-plan")
    ordered = []
    for cls in (1, 0):
        members = [p for p in patients if cohort.patient_label(p) == cls]
        ordered.extend(members[i] for i in rng.permutation(len(members)))
    groups = [ordered[f::n_folds] for f in range(n_folds)]
    position = {p: i for i, p in enumerate(patients)}
    folds = []
    for f, group in enumerate(groups):
        holdout = set(group)
        val = sorted(group[0::2], key=position.get)
        test = sorted(group[1::2], key=position.get)
        train = [p for p in patients if p not in holdout]
        folds.append(FoldSplit(f, tuple(train), tuple(val), tuple(test)))
    return CvPlan(tuple(folds), seed)


@dataclass
class LeakageReport:
    violations: list[str] = field(default_factory=list)
    patient_level_auc: float | None = None
    scan_level_auc: float | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_for_violations(self) -> None:
        if self.violations:
            raise LeakageError("; ".join(self.violations))


def audit_plan(plan: CvPlan, cohort: Cohort) -> list[str]:
    known = set(cohort.patients)
    problems = []
    holdout_count: dict[str, int] = {}
    for fs in plan.folds:
        sets = {"train": set(fs.train), "val": set(fs.val), "test": set(fs.test)}
        for name, members in sets.items():
            for p in sorted(members - known):
                problems.append(f"fold {fs.fold}: unknown patient {p} in {name}")
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            for p in sorted(sets[a] & sets[b]):
                problems.append(f"fold {fs.fold}: patient {p} in both {a} and {b}")
        if abs(len(fs.val) - len(fs.test)) > 1:
            problems.append(f"fold {fs.fold}: validation/test sizes {len(fs.val)}/{len(fs.test)} unbalanced")
        for p in sorted(known - sets["train"] - sets["val"] - sets["test"]):
            problems.append(f"fold {fs.fold}: patient {p} unassigned")
        for p in sets["val"] | sets["test"]:
            holdout_count[p] = holdout_count.get(p, 0) + 1
    for p in sorted(known):
        c = holdout_count.get(p, 0)
        if c != 1:
            problems.append(f"patient {p} held out {c} times")
    return problems


def leakage_audit(plan: CvPlan, cohort: Cohort, diagnostic: Callable | None = None) -> LeakageReport:
    """Check split invariants; optionally run the scan- vs patient-level comparison.

    ``diagnostic`` is called as ``diagnostic(cohort) -> (patient_auc, scan_auc)``.
    """
    report = LeakageReport(audit_plan(plan, cohort))
    if diagnostic is not None:
        report.patient_level_auc, report.scan_level_auc = diagnostic(cohort)
    return report


def compare_split_protocols(features: np.ndarray, labels: np.ndarray, patient_ids,
                            fit_predict: Callable, n_folds: int = 5, seed: int = 42) -> tuple[float, float]:
    """Mean test AUC of one model under patient-level and scan-level folds.

    ``fit_predict(X_train, y_train, X_test) -> scores``.  The scan-level
    protocol treats every scan as its own patient, so a patient's scans can
    straddle train and test.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    patient_ids = np.asarray(patient_ids)

    def run(groups: np.ndarray) -> float:
        uniq = list(dict.fromkeys(groups.tolist()))
        rng = RandomStream(seed).child("protocol")
        order = [uniq[i] for i in rng.permutation(len(uniq))]
        aucs = []
        for f in range(n_folds):
            held = set(order[f::n_folds])
            test = np.array([g in held for g in groups])
            if labels[test].min() == labels[test].max() or labels[~test].min() == labels[~test].max():
                continue
            scores = fit_predict(features[~test], labels[~test], features[test])
            aucs.append(auc(scores, labels[test]))
        return float(np.mean(aucs))

    scan_ids = np.arange(len(labels)).astype(str)
    return run(patient_ids), run(scan_ids)


# -- fold statistics -------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_two_sided_p(t, df)
    return 1.0 - tail if t >= 0 else tail


def t_quantile(q: float, df: float) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    lo, hi = -1e3, 1e3
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_value: float
    degenerate: bool = False


def paired_t_test(deltas) -> TTestResult:
    """Two-sided one-sample t-test on per-fold differences.

    Zero variance of the differences is reported as ``degenerate`` with p = 1.
    """
    d = np.asarray(deltas, dtype=np.float64)
    n = d.size
    if n < 2:
        raise ValueError("need at least two paired values")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0 or not np.isfinite(sd):
        return TTestResult(float("nan"), n - 1, 1.0, degenerate=True)
    t = float(d.mean()) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_sided_p(t, n - 1))


@dataclass(frozen=True)
class MethodResult:
    method: str
    fold_aucs: tuple[float, ...]
    mean: float
    sd: float
    ci_lo: float
    ci_hi: float
    p_vs_baseline: float | None = None


def summarize(fold_aucs, method: str = "", baseline=None) -> MethodResult:
    """Mean, sample SD and t-based 95% CI over folds; p-value vs a paired baseline."""
    v = np.asarray(fold_aucs, dtype=np.float64)
    n = v.size
    if n < 2:
        raise ValueError("need at least two folds")
    mean = float(v.mean())
    sd = float(np.std(v, ddof=1))
    half = t_quantile(0.975, n - 1) * sd / math.sqrt(n)
    p = None
    if baseline is not None:
        p = paired_t_test(v - np.asarray(baseline, dtype=np.float64)).p_value
    return MethodResult(method, tuple(v.tolist()), mean, sd, mean - half, mean + half, p)


def write_results_csv(path, rows: list[tuple[str, int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "fold", "test_auc"])
        for method, fold, value in rows:
            w.writerow([method, fold, repr(float(value))])


def read_results_csv(path) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["method"], {})[int(row["fold"])] = float(row["test_auc"])
    return out


def write_summary_csv(path, results: list[MethodResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "mean", "sd", "ci_lo", "ci_hi", "p_vs_baseline"])
        for r in results:
            p = "" if r.p_vs_baseline is None else repr(r.p_vs_baseline)
            w.writerow([r.method, repr(r.mean), repr(r.sd), repr(r.ci_lo), repr(r.ci_hi), p])


def read_summary_csv(path) -> list[MethodResult]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            p = float(row["p_vs_baseline"]) if row["p_vs_baseline"] else None
            out.append(MethodResult(row["method"], (), float(row["mean"]), float(row["sd"]),
                                    float(row["ci_lo"]), float(row["ci_hi"]), p))
    return out
