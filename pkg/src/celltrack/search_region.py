"""Candidate placements for a neighborhood in the previous frame.

The search area is the set of ``k`` pixels closest (in Mahalanobis distance,
using the neighborhood's own pixel covariance) to the neighborhood centroid's
position in the previous frame. ``l`` of them are kept as candidate centroids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import round_half_up

# distances are quantized before tie-breaking so that equal distances computed
# along different arithmetic paths sort identically
_DIST_DECIMALS = 9


@dataclass(eq=False)
class CandidateSet:
    points: np.ndarray  # (n, 2) int (row, col)
    k_used: int
    l_used: int

    def __len__(self):
        return len(self.points)


def regularize(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    eps = 1e-6 * max(float(np.trace(cov)), 1.0)
    return cov + eps * np.eye(2)


def mahalanobis_distance(p, center, covariance) -> float:
    diff = np.asarray(p, dtype=float) - np.asarray(center, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if abs(np.linalg.det(cov)) < 1e-300:
        raise ValueError("singular covariance")
    return float(math.sqrt(max(diff @ np.linalg.solve(cov, diff), 0.0)))


def _quad_form(inv, dr, dc):
    return inv[0, 0] * dr * dr + 2.0 * inv[0, 1] * dr * dc + inv[1, 1] * dc * dc


def knn_region(extent, center, covariance, k: int, return_distances: bool = False):
    """The ``k`` grid pixels nearest to ``center`` in Mahalanobis distance.

    ``extent`` is ``(width, height)``. Ties are broken by ``(row, col)`` and the
    result is sorted by ``(distance, row, col)``. Work is confined to a window
    around the center that grows until it provably holds the ``k`` nearest.
    """
    width, height = extent
    cov = regularize(covariance)
    inv = np.linalg.inv(cov)
    cr, cc = float(center[0]), float(center[1])
    total = width * height
    k = min(int(k), total)
    lam_max = float(np.linalg.eigvalsh(cov)[-1])
    half = max(int(math.ceil(4.0 * math.sqrt(lam_max))), int(math.ceil(math.sqrt(k))), 1)

    while True:
        r0 = max(0, int(math.floor(cr)) - half)
        r1 = min(height - 1, int(math.ceil(cr)) + half)
        c0 = max(0, int(math.floor(cc)) - half)
        c1 = min(width - 1, int(math.ceil(cc)) + half)
        rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        rows, cols = rows.ravel(), cols.ravel()
        d = np.sqrt(np.maximum(_quad_form(inv, rows - cr, cols - cc), 0.0))
        dq = np.round(d, _DIST_DECIMALS)
        full = r0 == 0 and c0 == 0 and r1 == height - 1 and c1 == width - 1
        if full or len(d) >= k:
            order = np.lexsort((cols, rows, dq))[:k]
            if full:
                break
            # smallest distance any pixel outside the window can have
            bounds = []
            if r0 > 0:
                bounds.append((cr - (r0 - 1)) / math.sqrt(cov[0, 0]))
            if r1 < height - 1:
                bounds.append(((r1 + 1) - cr) / math.sqrt(cov[0, 0]))
            if c0 > 0:
                bounds.append((cc - (c0 - 1)) / math.sqrt(cov[1, 1]))
            if c1 < width - 1:
                bounds.append(((c1 + 1) - cc) / math.sqrt(cov[1, 1]))
            if k == 0 or dq[order[-1]] < round(min(bounds), _DIST_DECIMALS):
                break
        half *= 2

    pts = np.stack([rows[order], cols[order]], axis=1).astype(np.int64)
    if return_distances:
        return pts, d[order]
    return pts


def select_candidates(region, l: int) -> CandidateSet:
    """Deterministic stride sample of ``l`` points from a distance-sorted region."""
    region = np.asarray(region, dtype=np.int64).reshape(-1, 2)
    n = len(region)
    if l >= n:
        return CandidateSet(region.copy(), n, l)
    idx = [(i * n) // l for i in range(l)]
    seen = set()
    keep = []
    for i in idx:
        if i not in seen:
            seen.add(i)
            keep.append(i)
    return CandidateSet(region[keep], n, l)


def region_parameters(neighborhood_pixel_count: int, alpha_k: float, alpha_l: float) -> tuple[int, int]:
    if alpha_k <= 0 or alpha_l <= 0:
        raise ValueError("alpha_k and alpha_l must be positive")
    k = max(1, round_half_up(alpha_k * neighborhood_pixel_count))
    l = max(1, round_half_up(alpha_l * neighborhood_pixel_count))
    return k, min(l, k)
