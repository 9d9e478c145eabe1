from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..core_data import Cohort, RegionId, RegionMask, Volume3D
from . import texture
from .discretize import DEFAULT_BIN_WIDTH, DiscretizedRegion, discretize
from .first_order import first_order_features
from .schema import FEATURE_NAMES, FeatureVector
from .shape import shape_from_voxels


def features_from_region(d: DiscretizedRegion) -> FeatureVector:
    out = first_order_features(d)
    region = d.grid(pad=0) > 0
    out.update(shape_from_voxels(region, d.spacing))
    out.update(texture.glcm_features(texture.glcm_matrix(d)))
    out.update(texture.glrlm_features(texture.glrlm_matrix(d), d.n_voxels))
    out.update(texture.glszm_features(texture.glszm_matrix(d), d.n_voxels))
    out.update(texture.gldm_features(texture.gldm_matrix(d)))
    out.update(texture.ngtdm_features(texture.ngtdm_matrix(d)))
    return FeatureVector.from_mapping(out)


def extract_features(volume: Volume3D, mask: RegionMask, region: RegionId,
                     bin_width: float = DEFAULT_BIN_WIDTH) -> FeatureVector:
    return features_from_region(discretize(volume, mask, region, bin_width))


def _scan_task(args):
    cohort, index, regions, bin_width = args
    rec = cohort.records[index]
    vol, mask = cohort.load_scan(rec)
    return [extract_features(vol, mask, r, bin_width).values for r in regions]


def extract_cohort(cohort: Cohort, regions, bin_width: float = DEFAULT_BIN_WIDTH,
                   jobs: int = 1) -> np.ndarray:
    """Feature array of shape (n_scans, n_regions, n_features) in manifest order."""
    tasks = [(cohort, i, tuple(regions), bin_width) for i in range(len(cohort))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scan_task, tasks, chunksize=4))
    else:
        rows = [_scan_task(t) for t in tasks]
    return np.array(rows, dtype=np.float64).reshape(len(cohort), len(regions), len(FEATURE_NAMES))


def write_features_csv(path, cohort: Cohort, regions, table: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "scan_id", "region", *FEATURE_NAMES])
        for i, rec in enumerate(cohort.records):
            for k, region in enumerate(regions):
                w.writerow([rec.patient_id, rec.scan_id, region.value, *map(repr, table[i, k].tolist())])


def read_features_csv(path) -> tuple[list[tuple[str, str, str]], np.ndarray]:
    keys, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[3:]) != FEATURE_NAMES:
            raise ValueError(f"{path}: feature columns do not match the schema")
        for row in reader:
            keys.append((row[0], row[1], row[2]))
            rows.append([float(x) for x in row[3:]])
    return keys, np.array(rows, dtype=np.float64)
