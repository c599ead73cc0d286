"""Dynamic neighborhoods: an anchor cell plus layers of dilation-adjacent unmatched cells."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CellRecord, coordinate_covariance, disk_offsets


@dataclass(eq=False)
class Neighborhood:
    anchor_id: int
    member_ids: list[int]
    layer_of: dict[int, int]
    pixels: np.ndarray
    centroid: tuple[float, float]
    covariance: np.ndarray
    members: list[CellRecord] = field(repr=False, default_factory=list)

    def __len__(self):
        return len(self.member_ids)

    @property
    def pixel_count(self) -> int:
        return len(self.pixels)


def candidate_pool(c: CellRecord, frame_cells, unmatched, R: float) -> list[CellRecord]:
    """Unmatched cells whose centroid lies within distance ``R`` of ``c``'s centroid.

    ``c`` itself is always part of the pool.
    """
    cr, cc = c.centroid
    pool = []
    for cell in frame_cells:
        if cell.id == c.id:
            pool.append(cell)
            continue
        if cell.id not in unmatched:
            continue
        if math.hypot(cell.centroid[0] - cr, cell.centroid[1] - cc) <= R:
            pool.append(cell)
    return pool


def layer_bound(c: CellRecord, colony_centroid, colony_radius: float, L_max: int) -> int:
    """Number of neighbor layers for ``c``: ``L_max`` at the colony centroid, 1 at its rim."""
    if colony_radius <= 0:
        return int(L_max)
    d = math.hypot(c.centroid[0] - colony_centroid[0], c.centroid[1] - colony_centroid[1])
    frac = 1.0 - d / colony_radius
    L = 1 + math.floor((L_max - 1) * frac + 1e-12)
    return int(min(max(L, 1), L_max))


def colony_radius(cells, colony_centroid) -> float:
    cr, cc = colony_centroid
    return max(math.hypot(c.centroid[0] - cr, c.centroid[1] - cc) for c in cells)


def build_neighborhood(c: CellRecord, pool, r: float, L: int) -> Neighborhood:
    """Grow ``L`` layers of neighbors around ``c``, drawing only from ``pool``.

    Layer ``k + 1`` holds the pool cells touched by the radius-``r`` dilation of
    any layer-``k`` cell and not already included.
    """
    by_id = {cell.id: cell for cell in pool}
    by_id[c.id] = c
    offs = disk_offsets(r)
    rho = int(np.abs(offs).max()) if len(offs) else 0

    ids = sorted(by_id)
    index = {cid: i + 1 for i, cid in enumerate(ids)}
    allpix = np.concatenate([by_id[i].pixels for i in ids])
    lo = allpix.min(axis=0) - rho
    hi = allpix.max(axis=0) + rho
    grid = np.zeros(tuple(hi - lo + 1), dtype=np.int32)
    for cid in ids:
        p = by_id[cid].pixels - lo
        grid[p[:, 0], p[:, 1]] = index[cid]

    layer_of = {c.id: 0}
    order = [c.id]
    frontier = [c.id]
    for k in range(1, L + 1):
        pts = np.concatenate([by_id[i].pixels for i in frontier]) - lo
        reach = (pts[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        hit = np.unique(grid[reach[:, 0], reach[:, 1]])
        found = sorted(ids[h - 1] for h in hit if h > 0 and ids[h - 1] not in layer_of)
        if not found:
            break
        for cid in found:
            layer_of[cid] = k
        order.extend(found)
        frontier = found

    members = [by_id[i] for i in order]
    pixels = np.concatenate([m.pixels for m in members])
    cen = pixels.mean(axis=0)
    return Neighborhood(
        anchor_id=c.id,
        member_ids=order,
        layer_of=layer_of,
        pixels=pixels,
        centroid=(float(cen[0]), float(cen[1])),
        covariance=coordinate_covariance(pixels),
        members=members,
    )
