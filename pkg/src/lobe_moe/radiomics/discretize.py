from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core_data import DataError, RegionId, RegionMask, Volume3D

DEFAULT_BIN_WIDTH = 25.0


@dataclass(frozen=True)
class DiscretizedRegion:
    """Fixed-width gray-level bins of the voxels inside one region.

    ``bins[i]``, ``values[i]`` and ``coords[i]`` describe the same voxel.
    Bin 1 starts at the region's own minimum HU.
    """

    bins: np.ndarray
    values: np.ndarray
    coords: np.ndarray
    bin_width: float
    spacing: tuple[float, float, float]
    min_hu: float

    @property
    def bin_count(self) -> int:
        return int(self.bins.max())

    @property
    def n_voxels(self) -> int:
        return int(self.bins.size)

    def grid(self, pad: int = 1) -> np.ndarray:
        """Bounding-box bin grid, 0 outside the region, zero-padded by ``pad``."""
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        shape = tuple(int(s) for s in (hi - lo + 1 + 2 * pad))
        g = np.zeros(shape, dtype=np.int64)
        c = self.coords - lo + pad
        g[c[:, 0], c[:, 1], c[:, 2]] = self.bins
        return g


def bin_indices(values: np.ndarray, bin_width: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return (np.floor((values - values.min()) / bin_width) + 1).astype(np.int64)


def discretize_voxels(values, coords, bin_width: float = DEFAULT_BIN_WIDTH,
                      spacing=(1.0, 1.0, 1.0)) -> DiscretizedRegion:
    values = np.asarray(values, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if values.size == 0:
        raise DataError("empty region")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    return DiscretizedRegion(bin_indices(values, bin_width), values, coords, float(bin_width),
                             tuple(spacing), float(values.min()))


def discretize(volume: Volume3D, mask: RegionMask, region: RegionId,
               bin_width: float = DEFAULT_BIN_WIDTH) -> DiscretizedRegion:
    if volume.dims != mask.dims:
        raise DataError(f"dims mismatch: volume {volume.dims} vs mask {mask.dims}")
    sel = mask.region(region)
    coords = np.argwhere(sel)
    if coords.size == 0:
        raise DataError(f"empty region {region.value}")
    return discretize_voxels(volume.voxels[sel], coords, bin_width, volume.spacing)
