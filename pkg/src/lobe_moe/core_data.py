"""Volumes, lobe masks, region selection and cohort manifests."""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FILL_HU = -1024.0

_DTYPES = {"i16": np.dtype("<i2"), "u8": np.dtype("u1")}
MANIFEST_COLUMNS = ("patient_id", "scan_id", "label", "volume_path", "mask_path")


class DataError(ValueError):
    """Raised for malformed files or records."""


class RegionId(enum.Enum):
    LUL = "LUL"
    LLL = "LLL"
    RUL = "RUL"
    RML = "RML"
    RLL = "RLL"
    LEFT_LUNG = "LeftLung"
    RIGHT_LUNG = "RightLung"

    @property
    def labels(self) -> tuple[int, ...]:
        return _REGION_LABELS[self]

    @property
    def is_lobe(self) -> bool:
        return len(self.labels) == 1

    @classmethod
    def parse(cls, name: str) -> "RegionId":
        for r in cls:
            if r.value == name or r.name == name:
                return r
        raise ValueError(f"unknown region {name!r}")


_REGION_LABELS = {
    RegionId.LUL: (1,),
    RegionId.LLL: (2,),
    RegionId.RUL: (3,),
    RegionId.RML: (4,),
    RegionId.RLL: (5,),
    RegionId.LEFT_LUNG: (1, 2),
    RegionId.RIGHT_LUNG: (3, 4, 5),
}

LOBES = tuple(r for r in RegionId if r.is_lobe)
ALL_REGIONS = tuple(RegionId)
REGION_MODES = {"five_lobes": LOBES, "seven_regions": ALL_REGIONS}


def regions_for_mode(mode: str) -> tuple[RegionId, ...]:
    try:
        return REGION_MODES[mode]
    except KeyError:
        raise ValueError(f"unknown region mode {mode!r}; expected one of {sorted(REGION_MODES)}") from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Volume3D:
    """CT volume in HU, stored as a (depth, height, width) float64 array."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        v = np.array(self.voxels, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DataError(f"volume must be 3D with positive dims, got shape {v.shape}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or not all(np.isfinite(s) and s > 0 for s in sp):
            raise DataError("non-positive spacing")
        if not np.all(np.isfinite(v)):
            raise DataError("non-finite HU values")
        object.__setattr__(self, "voxels", _readonly(v))
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class RegionMask:
    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels)
        if lab.ndim != 3:
            raise DataError("mask must be 3D")
        if lab.size and (lab.min() < 0 or lab.max() > 5):
            raise DataError("mask labels must lie in 0..5")
        object.__setattr__(self, "labels", _readonly(lab.astype(np.uint8)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def region(self, region: RegionId) -> np.ndarray:
        return np.isin(self.labels, region.labels)

    def validate_training(self) -> None:
        missing = [r.value for r in LOBES if not np.any(self.labels == r.labels[0])]
        if missing:
            raise DataError(f"mask has empty lobes: {', '.join(missing)}")


def _check_dims(volume: Volume3D, mask: RegionMask) -> None:
    if volume.dims != mask.dims:
        raise DataError(f"dims mismatch: volume {volume.dims} vs mask {mask.dims}")


def extract_region(volume: Volume3D, mask: RegionMask, region: RegionId,
                   fill_value: float = FILL_HU) -> Volume3D:
    _check_dims(volume, mask)
    out = np.where(mask.region(region), volume.voxels, fill_value)
    return Volume3D(out, volume.spacing)


def region_voxel_count(mask: RegionMask, region: RegionId) -> int:
    return int(np.count_nonzero(mask.region(region)))


# -- .vol container ---------------------------------------------------------

def _write_container(path, array: np.ndarray, spacing, dtype_tag: str) -> None:
    d, h, w = array.shape
    header = f"VOL1 {d} {h} {w} {spacing[0]!r} {spacing[1]!r} {spacing[2]!r} {dtype_tag}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(np.ascontiguousarray(array, dtype=_DTYPES[dtype_tag]).tobytes())


def _read_container(path) -> tuple[np.ndarray, tuple[float, float, float], str]:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: malformed header")
    parts = raw[:nl].decode("utf-8", errors="replace").split()
    if len(parts) != 8 or parts[0] != "VOL1" or parts[7] not in _DTYPES:
        raise DataError(f"{path}: malformed header")
    try:
        dims = tuple(int(p) for p in parts[1:4])
        spacing = tuple(float(p) for p in parts[4:7])
    except ValueError:
        raise DataError(f"{path}: malformed header") from None
    if min(dims) < 1:
        raise DataError(f"{path}: malformed header")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise DataError(f"{path}: non-positive spacing")
    dtype = _DTYPES[parts[7]]
    payload = raw[nl + 1:]
    if len(payload) != int(np.prod(dims)) * dtype.itemsize:
        raise DataError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims), spacing, parts[7]


def write_volume(path, volume: Volume3D) -> None:
    v = volume.voxels
    if not np.array_equal(v, np.rint(v)):
        raise DataError("i16 volumes require integral HU values")
    if v.min() < -32768 or v.max() > 32767:
        raise DataError("HU values exceed the 16-bit range")
    _write_container(path, v, volume.spacing, "i16")


def load_volume(path) -> Volume3D:
    arr, spacing, tag = _read_container(path)
    return Volume3D(arr.astype(np.float64), spacing)


def write_mask(path, mask: RegionMask, spacing=(1.0, 1.0, 1.0)) -> None:
    _write_container(path, mask.labels, spacing, "u8")


def load_mask(path) -> RegionMask:
    arr, _, tag = _read_container(path)
    if tag != "u8":
        raise DataError(f"{path}: masks must use dtype u8")
    return RegionMask(arr)


# -- cohort manifests -------------------------------------------------------

@dataclass(frozen=True)
class ScanRecord:
    patient_id: str
    scan_id: str
    label: int
    volume_path: str
    mask_path: str


@dataclass(frozen=True)
class Cohort:
    records: tuple[ScanRecord, ...]
    root: Path = Path(".")
    patient_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise DataError("empty cohort")
        index: dict[str, list[int]] = {}
        seen = set()
        for i, rec in enumerate(records):
            key = (rec.patient_id, rec.scan_id)
            if key in seen:
                raise DataError(f"duplicate scan {rec.scan_id!r} for patient {rec.patient_id!r}")
            seen.add(key)
            if rec.label not in (0, 1):
                raise DataError(f"label outside {{0,1}} for scan {rec.scan_id!r}")
            index.setdefault(rec.patient_id, []).append(i)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "patient_index",
                           {p: tuple(ix) for p, ix in index.items()})

    def __len__(self) -> int:
        return len(self.records)

    @property
    def patients(self) -> tuple[str, ...]:
        return tuple(self.patient_index)

    def patient_label(self, patient_id: str) -> int:
        return max(self.records[i].label for i in self.patient_index[patient_id])

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def load_scan(self, rec: ScanRecord) -> tuple[Volume3D, RegionMask]:
        vol = load_volume(self.resolve(rec.volume_path))
        mask = load_mask(self.resolve(rec.mask_path))
        _check_dims(vol, mask)
        return vol, mask


def load_cohort(manifest) -> Cohort:
    manifest = Path(manifest)
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing column(s): {', '.join(missing)}")
        records = []
        for row in reader:
            try:
                label = int(row["label"])
            except ValueError:
                raise DataError(f"label outside {{0,1}}: {row['label']!r}") from None
            records.append(ScanRecord(row["patient_id"], row["scan_id"], label,
                                      row["volume_path"], row["mask_path"]))
    return Cohort(tuple(records), root=manifest.parent)


def write_cohort(manifest, cohort: Cohort) -> None:
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in cohort.records:
            writer.writerow([r.patient_id, r.scan_id, r.label,
                             r.volume_path.replace(os.sep, "/"), r.mask_path.replace(os.sep, "/")])
