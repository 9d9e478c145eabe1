"""Synthetic lung-phantom cohorts with basal-predominant disease texture.

Each scan is a soft-tissue block holding two ellipsoidal lungs.  The lungs
are cut into five lobes by axial planes at fixed fractions of each lung's
craniocaudal extent (left 55/45, right 40/25/35).  Disease-positive patients
carry a reticular texture (mean shift plus a checkerboard component) in a
random subset of lobes, with the lower lobes favoured by ``basal_bias``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_data import (LOBES, Cohort, DataError, RegionId, RegionMask, ScanRecord, Volume3D,
                        write_cohort, write_mask, write_volume)
from .stats import RandomStream, derive_seed

HEALTHY_HU = -800.0
TISSUE_HU = 40.0
DISEASE_SHIFT_HU = 250.0
CHECKER_HU = 120.0
PATIENT_OFFSET_SD = 15.0

LOWER_LOBES = (RegionId.LLL, RegionId.RLL)

# (region, upper fraction boundary) walking craniocaudally
_LEFT_SPLIT = ((RegionId.LUL, 0.55), (RegionId.LLL, 1.0))
_RIGHT_SPLIT = ((RegionId.RUL, 0.40), (RegionId.RML, 0.65), (RegionId.RLL, 1.0))


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 200
    scans_per_patient: tuple[int, int] = (1, 3)
    dims: tuple[int, int, int] = (32, 48, 48)
    spacing: tuple[float, float, float] = (2.0, 1.5, 1.5)
    disease_prevalence: float = 0.6
    basal_bias: float = 0.8
    noise_sigma: float = 40.0
    seed: int = 42

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        lo, hi = self.scans_per_patient
        if lo < 1 or lo > hi:
            raise ValueError("scans_per_patient must satisfy 1 <= min <= max")
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ValueError("degenerate dims: each dimension must be >= 8")
        if not 0.0 < self.disease_prevalence < 1.0:
            raise ValueError("disease_prevalence must lie in (0, 1)")
        if not 0.0 <= self.basal_bias <= 1.0:
            raise ValueError("basal_bias must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def lobe_probability(self, region: RegionId) -> float:
        b = self.basal_bias
        return 0.5 + 0.5 * b if region in LOWER_LOBES else 0.5 - 0.5 * b


@dataclass(frozen=True)
class TruthRow:
    scan_id: str
    region: RegionId
    diseased: bool
    intensity: float


@dataclass
class PhantomTruth:
    rows: list[TruthRow] = field(default_factory=list)

    def for_scan(self, scan_id: str) -> list[TruthRow]:
        return [r for r in self.rows if r.scan_id == scan_id]

    def diseased_regions(self, scan_id: str) -> set[RegionId]:
        return {r.region for r in self.rows if r.scan_id == scan_id and r.diseased}


def lung_phantom(dims: tuple[int, int, int], scale: float = 1.0) -> np.ndarray:
    """Label volume with the five lobes of a two-ellipsoid phantom."""
    d, h, w = dims
    z, y, x = np.meshgrid(np.arange(d) + 0.5, np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    labels = np.zeros(dims, dtype=np.uint8)
    cz, cy = d / 2.0, h / 2.0
    az, ay, ax = 0.42 * d * scale, 0.36 * h * scale, 0.20 * w * scale
    # image-left holds the right lung (radiological convention)
    for cx, split in ((0.27 * w, _RIGHT_SPLIT), (0.73 * w, _LEFT_SPLIT)):
        inside = ((z - cz) / az) ** 2 + ((y - cy) / ay) ** 2 + ((x - cx) / ax) ** 2 <= 1.0
        zs = np.nonzero(inside.any(axis=(1, 2)))[0]
        if zs.size == 0:
            continue
        z0, extent = zs[0], zs[-1] + 1 - zs[0]
        frac = (np.arange(d) - z0 + 0.5) / extent
        prev = -np.inf
        for region, upper in split:
            band = (frac > prev) & (frac <= upper)
            labels[inside & band[:, None, None]] = region.labels[0]
            prev = upper
    return labels


def _checker(dims) -> np.ndarray:
    idx = np.indices(dims).sum(axis=0)
    return np.where(idx % 2 == 0, 1.0, -1.0)


def _sample_disease(cfg: SynthConfig, rng: RandomStream) -> dict[RegionId, float]:
    probs = np.array([cfg.lobe_probability(r) for r in LOBES])
    while True:
        hit = rng.uniform(len(LOBES)) < probs
        if hit.any():
            break
    intensity = rng.uniform(len(LOBES), 0.3, 1.0)
    return {r: float(intensity[i]) for i, r in enumerate(LOBES) if hit[i]}


def render_scan(cfg: SynthConfig, patient_id: str, scan_id: str, disease: dict[RegionId, float],
                offset: float, scale: float) -> tuple[Volume3D, RegionMask, dict[RegionId, float]]:
    """Pure function of its arguments; per-scan noise comes from a hashed seed."""
    rng = RandomStream(derive_seed(cfg.seed, patient_id, scan_id))
    labels = lung_phantom(cfg.dims, scale)
    mask = RegionMask(labels)
    mask.validate_training()
    hu = np.full(cfg.dims, TISSUE_HU)
    lung = labels > 0
    hu[lung] = HEALTHY_HU + offset
    checker = _checker(cfg.dims)
    applied = {}
    for region, base in disease.items():
        jitter = float(rng.uniform(low=0.9, high=1.1))
        level = base * jitter
        sel = labels == region.labels[0]
        hu[sel] += level * (DISEASE_SHIFT_HU + CHECKER_HU * checker[sel])
        applied[region] = level
    hu += rng.normal(cfg.dims, sigma=cfg.noise_sigma) if cfg.noise_sigma > 0 else 0.0
    hu = np.clip(np.rint(hu), -1024, 3071)
    return Volume3D(hu, cfg.spacing), mask, applied


def generate_cohort(config: SynthConfig, out_dir) -> tuple[Cohort, PhantomTruth]:
    out = Path(out_dir)
    try:
        (out / "volumes").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"unwritable directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DataError(f"unwritable directory {out}")

    records, truth = [], PhantomTruth()
    lo, hi = config.scans_per_patient
    for p in range(config.n_patients):
        pid = f"P{p + 1:04d}"
        prng = RandomStream(derive_seed(config.seed, pid))
        label = int(prng.uniform() < config.disease_prevalence)
        n_scans = prng.integers(lo, hi + 1)
        offset = prng.normal(sigma=PATIENT_OFFSET_SD)
        scale = prng.uniform(low=0.92, high=1.04)
        disease = _sample_disease(config, prng) if label else {}
        for s in range(n_scans):
            sid = f"{pid}_S{s + 1}"
            vol, mask, applied = render_scan(config, pid, sid, disease, offset, scale)
            vpath, mpath = f"volumes/{sid}.vol", f"masks/{sid}.vol"
            write_volume(out / vpath, vol)
            write_mask(out / mpath, mask, vol.spacing)
            records.append(ScanRecord(pid, sid, label, vpath, mpath))
            for region in LOBES:
                truth.rows.append(TruthRow(sid, region, region in applied, applied.get(region, 0.0)))

    cohort = Cohort(tuple(records), root=out)
    write_cohort(out / "manifest.csv", cohort)
    write_truth(out / "truth.csv", truth)
    return cohort, truth


def write_truth(path, truth: PhantomTruth) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan_id", "region", "diseased", "intensity"])
        for r in truth.rows:
            w.writerow([r.scan_id, r.region.value, int(r.diseased), repr(r.intensity)])


def read_truth(path) -> PhantomTruth:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [TruthRow(r["scan_id"], RegionId.parse(r["region"]), r["diseased"] == "1",
                         float(r["intensity"])) for r in csv.DictReader(fh)]
    return PhantomTruth(rows)


def describe_truth(truth: PhantomTruth) -> list[dict]:
    """Per-region disease frequency and mean intensity of the diseased cases.

    Lung-level rows are derived: a lung counts as diseased when any of its
    lobes is.
    """
    if not truth.rows:
        return []
    by_scan: dict[str, dict[RegionId, float]] = {}
    for r in truth.rows:
        by_scan.setdefault(r.scan_id, {})
        if r.diseased:
            by_scan[r.scan_id][r.region] = r.intensity
    n = len(by_scan)
    table = []
    for region in RegionId:
        hits = []
        for diseased in by_scan.values():
            levels = [diseased[l] for l in LOBES if l.labels[0] in region.labels and l in diseased]
            if levels:
                hits.append(float(np.mean(levels)))
        table.append({
            "region": region.value,
            "frequency": len(hits) / n,
            "mean_intensity": float(np.mean(hits)) if hits else 0.0,
        })
    return table
