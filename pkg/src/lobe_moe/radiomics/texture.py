"""Texture matrices on a discretized region and the features derived from them.

All matrices use voxel-lattice neighbours at distance 1 (spacing is ignored).
Directional families (GLCM, GLRLM) aggregate by summing counts over the 13
unique 3D directions before any feature is computed.  Neighbourhood families
(GLSZM, GLDM, NGTDM) use 26-connectivity.  Gray levels are 1-based bins;
matrix row ``i`` holds level ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..core_data import DataError
from .discretize import DiscretizedRegion

DIRECTIONS_13 = tuple(
    (dz, dy, dx)
    for dz in (0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
    if (dz, dy, dx) > (0, 0, 0)
)
NEIGHBORS_26 = tuple(
    (dz, dy, dx)
    for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
    if (dz, dy, dx) != (0, 0, 0)
)
NGTDM_COARSENESS_CAP = 1e6


@dataclass(frozen=True)
class TextureMatrix:
    """Raw counts (or, for NGTDM, per-level ``n``/``s`` columns)."""

    kind: str
    counts: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        if self.kind == "NGTDM":
            n = self.counts[:, 0]
            total = n.sum()
            return n / total if total else n
        return self.counts / self.counts.sum()


def _view(padded: np.ndarray, offset) -> np.ndarray:
    """Core-shaped view of ``padded`` (pad 1) displaced by ``offset``."""
    sl = []
    for o, s in zip(offset, padded.shape):
        sl.append(slice(1 + o, s - 1 + o))
    return padded[tuple(sl)]


def _shift(a: np.ndarray, offset) -> np.ndarray:
    """out[v] = a[v - offset], False where v - offset leaves the array."""
    out = np.zeros_like(a)
    dst, src = [], []
    for o, s in zip(offset, a.shape):
        dst.append(slice(max(0, o), s + min(0, o)))
        src.append(slice(max(0, -o), s - max(0, o)))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _entropy2(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0


# -- GLCM -------------------------------------------------------------------

GLCM_NAMES = ("glcm_contrast", "glcm_correlation", "glcm_joint_energy",
              "glcm_joint_entropy", "glcm_homogeneity")


def glcm_matrix(d: DiscretizedRegion) -> TextureMatrix:
    g = d.grid()
    core = _view(g, (0, 0, 0))
    ng = d.bin_count
    counts = np.zeros(ng * ng, dtype=np.int64)
    for o in DIRECTIONS_13:
        nb = _view(g, o)
        valid = (core > 0) & (nb > 0)
        a = core[valid] - 1
        b = nb[valid] - 1
        counts += np.bincount(a * ng + b, minlength=ng * ng)
        counts += np.bincount(b * ng + a, minlength=ng * ng)
    if counts.sum() == 0:
        raise DataError("no valid neighbor pair")
    return TextureMatrix("GLCM", counts.reshape(ng, ng))


def glcm_features(m: TextureMatrix) -> dict[str, float]:
    p = m.normalized
    ng = p.shape[0]
    i = np.arange(1, ng + 1, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")
    diff2 = (ii - jj) ** 2
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mux, muy = float(i @ px), float(i @ py)
    sx = np.sqrt(float(((i - mux) ** 2) @ px))
    sy = np.sqrt(float(((i - muy) ** 2) @ py))
    if sx * sy > 0:
        corr = float(np.sum((ii - mux) * (jj - muy) * p)) / (sx * sy)
    else:
        corr = 1.0
    return {
        "glcm_contrast": float(np.sum(diff2 * p)),
        "glcm_correlation": corr,
        "glcm_joint_energy": float(np.sum(p * p)),
        "glcm_joint_entropy": _entropy2(p.ravel()),
        "glcm_homogeneity": float(np.sum(p / (1.0 + diff2))),
    }


# -- GLRLM ------------------------------------------------------------------

GLRLM_NAMES = ("glrlm_short_run_emphasis", "glrlm_long_run_emphasis",
               "glrlm_gray_level_nonuniformity", "glrlm_run_length_nonuniformity",
               "glrlm_run_percentage")


def glrlm_matrix(d: DiscretizedRegion) -> TextureMatrix:
    """Run counts: rows gray level, column ``j`` = run length ``j + 1``."""
    g = d.grid()
    core = _view(g, (0, 0, 0))
    inside = core > 0
    ng = d.bin_count
    max_len = max(core.shape)
    counts = np.zeros((ng, max_len), dtype=np.int64)
    for o in DIRECTIONS_13:
        same_next = inside & (core == _view(g, o))
        back = tuple(-c for c in o)
        front = inside & ~(core == _view(g, back))
        step = 0
        while front.any():
            ended = front & ~same_next
            if ended.any():
                counts[:, step] += np.bincount(core[ended] - 1, minlength=ng)
            front = _shift(front & same_next, o)
            step += 1
    longest = np.nonzero(counts.any(axis=0))[0][-1] + 1
    return TextureMatrix("GLRLM", counts[:, :longest])


def glrlm_features(m: TextureMatrix, n_voxels: int) -> dict[str, float]:
    p = m.counts.astype(np.float64)
    nr = p.sum()
    j = np.arange(1, p.shape[1] + 1, dtype=np.float64)
    by_length = p.sum(axis=0)
    by_level = p.sum(axis=1)
    return {
        "glrlm_short_run_emphasis": float(by_length @ (1.0 / j ** 2)) / nr,
        "glrlm_long_run_emphasis": float(by_length @ j ** 2) / nr,
        "glrlm_gray_level_nonuniformity": float(by_level @ by_level) / nr,
        "glrlm_run_length_nonuniformity": float(by_length @ by_length) / nr,
        "glrlm_run_percentage": nr / (len(DIRECTIONS_13) * n_voxels),
    }


# -- GLSZM ------------------------------------------------------------------

GLSZM_NAMES = ("glszm_small_area_emphasis", "glszm_large_area_emphasis",
               "glszm_gray_level_nonuniformity", "glszm_size_zone_nonuniformity",
               "glszm_zone_percentage")


def size_zones(d: DiscretizedRegion) -> tuple[np.ndarray, np.ndarray]:
    """(level, size) of every 26-connected constant-bin zone."""
    g = d.grid()
    core = _view(g, (0, 0, 0))
    inside = core > 0
    node = np.full(core.shape, -1, dtype=np.int64)
    node[inside] = np.arange(int(inside.sum()))
    rows, cols = [], []
    for o in DIRECTIONS_13:
        nb_node = _view(np.pad(node, 1, constant_values=-1), o)
        link = inside & (core == _view(g, o))
        rows.append(node[link])
        cols.append(nb_node[link])
    n = int(inside.sum())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    n_zones, label = connected_components(graph, directed=False)
    sizes = np.bincount(label, minlength=n_zones)
    levels = np.zeros(n_zones, dtype=np.int64)
    levels[label] = core[inside]
    return levels, sizes


def glszm_matrix(d: DiscretizedRegion) -> TextureMatrix:
    levels, sizes = size_zones(d)
    ng = d.bin_count
    counts = np.zeros((ng, int(sizes.max())), dtype=np.int64)
    np.add.at(counts, (levels - 1, sizes - 1), 1)
    return TextureMatrix("GLSZM", counts)


def glszm_features(m: TextureMatrix, n_voxels: int) -> dict[str, float]:
    p = m.counts.astype(np.float64)
    nz = p.sum()
    j = np.arange(1, p.shape[1] + 1, dtype=np.float64)
    by_size = p.sum(axis=0)
    by_level = p.sum(axis=1)
    return {
        "glszm_small_area_emphasis": float(by_size @ (1.0 / j ** 2)) / nz,
        "glszm_large_area_emphasis": float(by_size @ j ** 2) / nz,
        "glszm_gray_level_nonuniformity": float(by_level @ by_level) / nz,
        "glszm_size_zone_nonuniformity": float(by_size @ by_size) / nz,
        "glszm_zone_percentage": nz / n_voxels,
    }


# -- GLDM -------------------------------------------------------------------

GLDM_NAMES = ("gldm_small_dependence_emphasis", "gldm_large_dependence_emphasis",
              "gldm_gray_level_nonuniformity", "gldm_dependence_nonuniformity",
              "gldm_dependence_entropy")


def dependence_counts(d: DiscretizedRegion) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel (level, number of 26-neighbours in the region sharing its bin)."""
    g = d.grid()
    core = _view(g, (0, 0, 0))
    inside = core > 0
    dep = np.zeros(core.shape, dtype=np.int64)
    for o in NEIGHBORS_26:
        dep += inside & (_view(g, o) == core)
    return core[inside], dep[inside]


def gldm_matrix(d: DiscretizedRegion) -> TextureMatrix:
    """Rows gray level, column ``j`` = dependence ``j`` (0..26)."""
    levels, dep = dependence_counts(d)
    counts = np.zeros((d.bin_count, len(NEIGHBORS_26) + 1), dtype=np.int64)
    np.add.at(counts, (levels - 1, dep), 1)
    return TextureMatrix("GLDM", counts)


def gldm_features(m: TextureMatrix) -> dict[str, float]:
    # emphasis terms index dependence sizes from 1 (dependence + 1)
    p = m.counts.astype(np.float64)
    nz = p.sum()
    j = np.arange(1, p.shape[1] + 1, dtype=np.float64)
    by_dep = p.sum(axis=0)
    by_level = p.sum(axis=1)
    return {
        "gldm_small_dependence_emphasis": float(by_dep @ (1.0 / j ** 2)) / nz,
        "gldm_large_dependence_emphasis": float(by_dep @ j ** 2) / nz,
        "gldm_gray_level_nonuniformity": float(by_level @ by_level) / nz,
        "gldm_dependence_nonuniformity": float(by_dep @ by_dep) / nz,
        "gldm_dependence_entropy": _entropy2((p / nz).ravel()),
    }


# -- NGTDM ------------------------------------------------------------------

NGTDM_NAMES = ("ngtdm_coarseness", "ngtdm_contrast", "ngtdm_busyness",
               "ngtdm_complexity", "ngtdm_strength")


def ngtdm_matrix(d: DiscretizedRegion) -> TextureMatrix:
    """Per level: column 0 = n_i, column 1 = s_i.

    Only voxels with at least one in-region neighbour contribute.
    """
    g = d.grid()
    core = _view(g, (0, 0, 0))
    inside = core > 0
    total = np.zeros(core.shape, dtype=np.int64)
    count = np.zeros(core.shape, dtype=np.int64)
    for o in NEIGHBORS_26:
        nb = _view(g, o)
        total += nb
        count += nb > 0
    valid = inside & (count > 0)
    lv = core[valid]
    diff = np.abs(lv - total[valid] / count[valid])
    ng = d.bin_count
    n = np.bincount(lv - 1, minlength=ng).astype(np.float64)
    s = np.bincount(lv - 1, weights=diff, minlength=ng)
    return TextureMatrix("NGTDM", np.stack([n, s], axis=1))


def ngtdm_features(m: TextureMatrix) -> dict[str, float]:
    n, s = m.counts[:, 0], m.counts[:, 1]
    nvp = n.sum()
    if nvp == 0:
        return {"ngtdm_coarseness": NGTDM_COARSENESS_CAP, "ngtdm_contrast": 0.0,
                "ngtdm_busyness": 0.0, "ngtdm_complexity": 0.0, "ngtdm_strength": 0.0}
    occ = n > 0
    i = np.arange(1, len(n) + 1, dtype=np.float64)[occ]
    p = (n / nvp)[occ]
    s = s[occ]
    ngp = int(occ.sum())
    ps = float(p @ s)
    coarseness = NGTDM_COARSENESS_CAP if ps == 0 else min(1.0 / ps, NGTDM_COARSENESS_CAP)
    di = i[:, None] - i[None, :]
    pp = p[:, None] * p[None, :]
    contrast = 0.0
    if ngp > 1:
        contrast = float(np.sum(pp * di ** 2)) / (ngp * (ngp - 1)) * float(s.sum()) / nvp
    ip = i * p
    bus_den = float(np.sum(np.abs(ip[:, None] - ip[None, :])))
    busyness = ps / bus_den if bus_den > 0 else 0.0
    psum = p[:, None] + p[None, :]
    weighted = (p * s)[:, None] + (p * s)[None, :]
    complexity = float(np.sum(np.abs(di) * weighted / psum)) / nvp
    s_total = float(s.sum())
    strength = float(np.sum(psum * di ** 2)) / s_total if s_total > 0 else 0.0
    return {
        "ngtdm_coarseness": coarseness,
        "ngtdm_contrast": contrast + 0.0,
        "ngtdm_busyness": busyness,
        "ngtdm_complexity": complexity + 0.0,
        "ngtdm_strength": strength + 0.0,
    }
