from __future__ import annotations

import numpy as np

from .discretize import DiscretizedRegion

NAMES = (
    "firstorder_energy",
    "firstorder_mean",
    "firstorder_variance",
    "firstorder_skewness",
    "firstorder_kurtosis",
    "firstorder_minimum",
    "firstorder_maximum",
    "firstorder_range",
    "firstorder_entropy",
    "firstorder_uniformity",
)


def first_order_features(d: DiscretizedRegion, values=None) -> dict[str, float]:
    """Intensity statistics of the region.

    Central moments are taken on ``x - min(x)`` so that adding an integer
    offset to integer HU data leaves variance, skewness and kurtosis
    bit-identical.  Skewness and kurtosis of a constant region are 0;
    kurtosis is the Fisher (excess) form.  Entropy and uniformity use the
    bin histogram, entropy in bits.
    """
    x = d.values if values is None else np.asarray(values, dtype=np.float64)
    lo = x.min()
    shifted = x - lo
    mu = shifted.mean()
    dev = shifted - mu
    m2 = float(np.mean(dev ** 2))
    if m2 > 0.0:
        skew = float(np.mean(dev ** 3)) / m2 ** 1.5
        kurt = float(np.mean(dev ** 4)) / m2 ** 2 - 3.0
    else:
        skew = kurt = 0.0
    p = np.bincount(d.bins)[1:] / d.n_voxels
    p = p[p > 0]
    hi = x.max()
    return {
        "firstorder_energy": float(np.sum(x * x)),
        "firstorder_mean": float(lo + mu),
        "firstorder_variance": m2,
        "firstorder_skewness": skew,
        "firstorder_kurtosis": kurt,
        "firstorder_minimum": float(lo),
        "firstorder_maximum": float(hi),
        "firstorder_range": float(hi - lo),
        "firstorder_entropy": float(-np.sum(p * np.log2(p))) + 0.0,
        "firstorder_uniformity": float(np.sum(p * p)),
    }
