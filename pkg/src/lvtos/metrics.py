"""Overlap and boundary-distance metrics for binary masks (distances in pixels)."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist


def dice(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary(mask) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask (off-grid counts as outside)."""
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, constant_values=False)
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~inner


def _boundary_points(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("mask is empty")
    return np.argwhere(boundary(m)).astype(np.float64)


def _nearest(a, b):
    pa, pb = _boundary_points(a), _boundary_points(b)
    d = cdist(pa, pb)
    return d.min(axis=1), d.min(axis=0)


def hausdorff(a, b) -> float:
    ab, ba = _nearest(a, b)
    return float(max(ab.max(), ba.max()))


def mean_surface_distance(a, b) -> float:
    ab, ba = _nearest(a, b)
    return math.fsum(np.concatenate([ab, ba]).tolist()) / (ab.size + ba.size)


def seg_metrics(pred, truth) -> dict[str, float]:
    return {"dice": dice(pred, truth), "hausdorff_px": hausdorff(pred, truth),
            "msd_px": mean_surface_distance(pred, truth)}
