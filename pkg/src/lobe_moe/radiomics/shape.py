from __future__ import annotations

import math

import numpy as np

from ..core_data import DataError, RegionId, RegionMask

NAMES = (
    "shape_volume",
    "shape_surface_area",
    "shape_sphericity",
    "shape_compactness",
)


def exposed_face_area(region: np.ndarray, spacing) -> float:
    """Total area of voxel faces separating the region from everything else."""
    dz, dy, dx = spacing
    face_area = (dy * dx, dz * dx, dz * dy)
    padded = np.pad(region, 1, constant_values=False)
    area = 0.0
    for axis in range(3):
        transitions = np.count_nonzero(np.diff(padded.astype(np.int8), axis=axis))
        area += transitions * face_area[axis]
    return area


def shape_from_voxels(region: np.ndarray, spacing) -> dict[str, float]:
    n = int(np.count_nonzero(region))
    if n == 0:
        raise DataError("empty region")
    volume = n * spacing[0] * spacing[1] * spacing[2]
    area = exposed_face_area(region, spacing)
    return {
        "shape_volume": volume,
        "shape_surface_area": area,
        "shape_sphericity": math.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area,
        "shape_compactness": volume / (math.sqrt(math.pi) * area ** 1.5),
    }


def shape_features(mask: RegionMask, region: RegionId, spacing) -> dict[str, float]:
    return shape_from_voxels(mask.region(region), spacing)
