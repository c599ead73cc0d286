"""Synthetic colonies of rod-shaped cells with exact lineage ground truth.

Rods grow along their axis, split at the midpoint once longer than
``division_length``, receive a small bounded random displacement every frame
and are then pushed apart pairwise until bodies no longer overlap. Growth
pushes the colony outward: every frame it is first scaled about its
centroid by part of the added area (``expansion``), then overlapping rods are
pushed along the line joining the closest points of their axes and, with
``rotation``, turned by the torque of that push. Each frame
is rasterized into a label mask with fresh, shuffled labels.

Randomness comes from numpy's PCG64 bit generator (``numpy.random.PCG64``),
seeded with ``SynthConfig.seed``; one generator drives the whole movie.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .evaluation import GroundTruth
from .geometry import LabelMask, extract_cells
from .lineage import append_correspondence, extract_tracks, init_forest
from .matching import Correspondence


class GridTooSmallError(ValueError):
    pass


@dataclass
class RodCell:
    id: int
    center: tuple  # (x, y) = (col, row)
    orientation: float
    length: float
    width: float
    parent_id: int | None = None
    growth: float = 0.0

    def axis(self) -> np.ndarray:
        return np.array([math.cos(self.orientation), math.sin(self.orientation)])

    def segment(self) -> tuple[np.ndarray, np.ndarray]:
        half = max(self.length - self.width, 0.0) / 2.0
        c = np.asarray(self.center, dtype=float)
        return c - half * self.axis(), c + half * self.axis()


@dataclass
class SynthConfig:
    seed: int = 0
    frames: int = 20
    initial_cells: int = 1
    growth_rate: float = 3.5
    division_length: float = 28.0
    jitter: float = 0.5
    relaxation_iters: int = 30
    grid: tuple = (160, 160)  # (width, height)
    cell_width: float = 7.0
    growth_jitter: float = 0.0
    division_kick: float = 0.1
    gap: float = 1.0
    expansion: float = 0.5  # share of growth that spreads the colony out before relaxation
    relax_step: float = 0.5  # fraction of each overlap resolved per relaxation sweep
    rotation: bool = True  # contact forces also turn rods

    def __post_init__(self):
        self.grid = tuple(int(v) for v in self.grid)
        if self.frames < 2:
            raise ConfigError("frames must be >= 2")
        if self.initial_cells < 1:
            raise ConfigError("initial_cells must be >= 1")
        if self.cell_width <= 0:
            raise ConfigError("cell_width must be positive")
        if self.division_length / 2 < self.cell_width:
            raise ConfigError("division_length must be at least twice cell_width")
        if not 0 <= self.jitter <= self.division_length / 2:
            raise ConfigError("jitter must lie in [0, division_length / 2]")
        if self.growth_rate < 0 or not 0 <= self.growth_jitter < 1:
            raise ConfigError("growth_rate must be >= 0 and growth_jitter in [0, 1)")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ConfigError("grid must be (width, height) with positive sides")
        if self.relaxation_iters < 0:
            raise ConfigError("relaxation_iters must be >= 0")
        if self.expansion < 0 or not 0 < self.relax_step <= 1:
            raise ConfigError("expansion must be >= 0 and relax_step in (0, 1]")


@dataclass(eq=False)
class SynthMovie:
    masks: list
    truth: GroundTruth
    forest: object
    correspondences: list = field(default_factory=list)
    rods: list = field(default_factory=list)  # per frame: list[RodCell]
    divisions: list = field(default_factory=list)  # (frame, parent_rod_id, child ids)

    def __iter__(self):
        return iter((self.masks, self.truth, self.forest))


# ------------------------------------------------------------ rasterizing


def _capsule_distance(px, py, cell: RodCell):
    a, b = cell.segment()
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def _bbox(cell: RodCell):
    a, b = cell.segment()
    rad = cell.width / 2.0
    c0 = int(math.floor(min(a[0], b[0]) - rad))
    c1 = int(math.ceil(max(a[0], b[0]) + rad))
    r0 = int(math.floor(min(a[1], b[1]) - rad))
    r1 = int(math.ceil(max(a[1], b[1]) + rad))
    return r0, r1, c0, c1


def rasterize_rod(cell: RodCell, grid=None) -> np.ndarray:
    """Pixels whose center lies inside the rod's capsule, clipped to ``grid = (width, height)``."""
    r0, r1, c0, c1 = _bbox(cell)
    if grid is not None:
        r0, c0 = max(r0, 0), max(c0, 0)
        r1, c1 = min(r1, grid[1] - 1), min(c1, grid[0] - 1)
    if r1 < r0 or c1 < c0:
        return np.zeros((0, 2), dtype=np.int64)
    rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    inside = _capsule_distance(cols.astype(float), rows.astype(float), cell) <= cell.width / 2.0
    return np.stack([rows[inside], cols[inside]], axis=1).astype(np.int64)


def _paint(rods, grid, frame: int):
    """Label grid (label i + 1 for rods[i]); contested pixels go to the nearer rod center."""
    width, height = grid
    labels = np.zeros((height, width), dtype=np.int64)
    best = np.full((height, width), np.inf)
    for i, rod in enumerate(rods):
        r0, r1, c0, c1 = _bbox(rod)
        if r0 < 0 or c0 < 0 or r1 >= height or c1 >= width:
            raise GridTooSmallError(f"frame {frame}: colony does not fit the {width}x{height} grid")
        pix = rasterize_rod(rod)
        d = np.hypot(pix[:, 1] - rod.center[0], pix[:, 0] - rod.center[1])
        win = d < best[pix[:, 0], pix[:, 1]]
        pr, pc = pix[win, 0], pix[win, 1]
        labels[pr, pc] = i + 1
        best[pr, pc] = d[win]
    present = np.bincount(labels.ravel(), minlength=len(rods) + 1)[1:]
    if (present == 0).any():
        raise GridTooSmallError(f"frame {frame}: a rod was completely covered by its neighbors")
    return labels


# ------------------------------------------------------------- mechanics


def _closest_points(p1, q1, p2, q2):
    """Closest points between segment batches [p1, q1] and [p2, q2] (arrays of shape (n, 2))."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    tiny = 1e-12
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > tiny, np.clip((b * f - c * e) / np.where(denom > tiny, denom, 1), 0, 1), 0.0)
        t = np.where(e > tiny, (b * s + f) / np.where(e > tiny, e, 1), 0.0)
        lo, hi = t < 0, t > 1
        t = np.clip(t, 0, 1)
        s_lo = np.where(a > tiny, np.clip(-c / np.where(a > tiny, a, 1), 0, 1), 0.0)
        s_hi = np.where(a > tiny, np.clip((b - c) / np.where(a > tiny, a, 1), 0, 1), 0.0)
    s = np.where(lo, s_lo, np.where(hi, s_hi, s))
    return p1 + s[:, None] * d1, p2 + t[:, None] * d2


def _capsule_area(rod) -> float:
    return rod.width * max(rod.length - rod.width, 0.0) + math.pi * rod.width ** 2 / 4.0


def expand(rods, factor: float) -> None:
    """Scale rod centers about the area-weighted colony centroid.

    Growth inside a packed colony produces a smooth outward flow; applying it as
    one affine step keeps neighbours moving together and leaves only small local
    overlaps for ``relax``.
    """
    if len(rods) < 2 or factor == 1.0:
        return
    areas = np.array([_capsule_area(r) for r in rods])
    centers = np.array([r.center for r in rods], dtype=float)
    mid = (areas[:, None] * centers).sum(axis=0) / areas.sum()
    centers = mid + factor * (centers - mid)
    for rod, c in zip(rods, centers):
        rod.center = (float(c[0]), float(c[1]))


def relax(rods, iters: int, gap: float = 0.0, step: float = 1.0, rotation: bool = False) -> None:
    """Pairwise push-apart of overlapping rods.

    Each sweep moves both rods of an overlapping pair by ``step`` times half the
    overlap, along the line joining the closest points of their axes. With
    ``rotation`` the same contact force also applies a torque about each rod's
    center, limited to 0.05 rad per sweep.
    """
    n = len(rods)
    if n < 2 or iters <= 0:
        return
    centers = np.array([r.center for r in rods], dtype=float)
    axes = np.array([r.axis() for r in rods])
    orient = np.array([r.orientation for r in rods], dtype=float)
    halves = np.array([max(r.length - r.width, 0.0) / 2.0 for r in rods])
    widths = np.array([r.width for r in rods])
    reach = 2 * halves.max() + widths.max() + gap
    for _ in range(iters):
        pairs = cKDTree(centers).query_pairs(reach, output_type="ndarray")
        if len(pairs) == 0:
            break
        i, j = pairs[:, 0], pairs[:, 1]
        a1 = centers[i] - halves[i, None] * axes[i]
        b1 = centers[i] + halves[i, None] * axes[i]
        a2 = centers[j] - halves[j, None] * axes[j]
        b2 = centers[j] + halves[j, None] * axes[j]
        ci, cj = _closest_points(a1, b1, a2, b2)
        sep = ci - cj
        dist = np.hypot(sep[:, 0], sep[:, 1])
        need = (widths[i] + widths[j]) / 2.0 + gap
        hit = dist < need - 1e-9
        if not hit.any():
            break
        i, j, sep, dist, need = i[hit], j[hit], sep[hit], dist[hit], need[hit]
        fallback = centers[i] - centers[j]
        small = dist < 1e-9
        sep[small] = fallback[small]
        norm = np.hypot(sep[:, 0], sep[:, 1])
        still = norm < 1e-9
        sep[still] = np.array([1.0, 0.0])
        norm[still] = 1.0
        push = (step * (need - dist) / 2.0)[:, None] * sep / norm[:, None]
        delta = np.zeros_like(centers)
        np.add.at(delta, i, push)
        np.add.at(delta, j, -push)
        if rotation:
            ci, cj = ci[hit], cj[hit]
            ri, rj = ci - centers[i], cj - centers[j]
            ti = ri[:, 0] * push[:, 1] - ri[:, 1] * push[:, 0]
            tj = -(rj[:, 0] * push[:, 1] - rj[:, 1] * push[:, 0])
            inertia = halves ** 2 / 3.0 + widths ** 2 / 4.0
            dtheta = np.zeros(n)
            np.add.at(dtheta, i, ti)
            np.add.at(dtheta, j, tj)
            dtheta = np.clip(dtheta / inertia, -0.05, 0.05)
            orient += dtheta
            axes = np.stack([np.cos(orient), np.sin(orient)], axis=1)
        centers += delta
    for rod, c, o in zip(rods, centers, orient):
        rod.center = (float(c[0]), float(c[1]))
        rod.orientation = float(o)


# ------------------------------------------------------------- generator


def _initial_rods(cfg: SynthConfig, rng) -> list[RodCell]:
    width, height = cfg.grid
    cx, cy = width / 2.0, height / 2.0
    rods = []
    spread = min(width, height) / 4.0 if cfg.initial_cells > 1 else 0.0
    for i in range(cfg.initial_cells):
        ang = 2 * math.pi * i / cfg.initial_cells
        rods.append(
            RodCell(
                id=i,
                center=(cx + spread * math.cos(ang), cy + spread * math.sin(ang)),
                orientation=float(rng.uniform(-math.pi / 2, math.pi / 2)),
                length=cfg.division_length / 2.0,
                width=cfg.cell_width,
                growth=_draw_growth(cfg, rng),
            )
        )
    return rods


def _draw_growth(cfg: SynthConfig, rng) -> float:
    if cfg.growth_jitter == 0:
        return cfg.growth_rate
    return cfg.growth_rate * float(rng.uniform(1 - cfg.growth_jitter, 1 + cfg.growth_jitter))


def _step(rods, cfg: SynthConfig, rng, next_id: int):
    """Grow, divide and jitter. Returns the new rods, each rod's predecessor id and the divisions."""
    out, parent, divisions = [], [], []
    for rod in rods:
        rod.length += rod.growth
        if rod.length > cfg.division_length:
            half = rod.length / 2.0
            ax = rod.axis()
            kids = []
            for sign in (-1.0, 1.0):
                c = np.asarray(rod.center) + sign * (half / 2.0) * ax
                kid = RodCell(
                    id=next_id,
                    center=(float(c[0]), float(c[1])),
                    orientation=rod.orientation + float(rng.uniform(-cfg.division_kick, cfg.division_kick)),
                    length=half,
                    width=rod.width,
                    parent_id=rod.id,
                    growth=_draw_growth(cfg, rng),
                )
                next_id += 1
                kids.append(kid)
                out.append(kid)
                parent.append(rod.id)
            divisions.append((rod.id, [k.id for k in kids]))
        else:
            out.append(rod)
            parent.append(rod.id)
    if cfg.jitter > 0:
        rad = cfg.jitter * np.sqrt(rng.uniform(0, 1, len(out)))
        ang = rng.uniform(0, 2 * math.pi, len(out))
        for rod, dr, a in zip(out, rad, ang):
            rod.center = (rod.center[0] + dr * math.cos(a), rod.center[1] + dr * math.sin(a))
    return out, parent, divisions, next_id


def _snapshot(rods):
    return [RodCell(r.id, r.center, r.orientation, r.length, r.width, r.parent_id, r.growth) for r in rods]


def generate_movie(cfg: SynthConfig) -> SynthMovie:
    """Simulate ``cfg.frames`` frames and return masks, ground truth and the true lineage forest."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    rods = _initial_rods(cfg, rng)
    relax(rods, cfg.relaxation_iters, cfg.gap, cfg.relax_step, cfg.rotation)
    next_id = len(rods)

    masks, corrs, history, division_log = [], [], [], []
    label_of_prev = None
    for frame in range(cfg.frames):
        if frame > 0:
            before = sum(_capsule_area(r) for r in rods)
            rods, parent_ids, divisions, next_id = _step(rods, cfg, rng, next_id)
            if cfg.expansion > 0:
                ratio = math.sqrt(sum(_capsule_area(r) for r in rods) / before)
                expand(rods, 1.0 + cfg.expansion * (ratio - 1.0))
            relax(rods, cfg.relaxation_iters, cfg.gap, cfg.relax_step, cfg.rotation)
            division_log.extend((frame, p, kids) for p, kids in divisions)
        grid = _paint(rods, cfg.grid, frame)
        perm = rng.permutation(len(rods)) + 1
        lookup = np.concatenate([[0], perm])
        masks.append(LabelMask(lookup[grid], frame))
        label_of = {rod.id: int(perm[i]) for i, rod in enumerate(rods)}
        if frame > 0:
            corr = Correspondence(frame_t=frame - 1)
            for rod, pid in zip(rods, parent_ids):
                d = label_of[rod.id]
                corr.pairs.append((d, label_of_prev[pid]))
                corr.scores[d] = float("nan")
            corr.pairs.sort()
            corrs.append(corr)
        label_of_prev = label_of
        history.append(_snapshot(rods))

    cells0 = extract_cells(masks[0])
    forest = init_forest(cells0, 0)
    for corr, mask in zip(corrs, masks[1:]):
        append_correspondence(forest, corr, extract_cells(mask))
    truth = GroundTruth(
        pairs={c.frame_t: c.pair_set() for c in corrs},
        tracks=extract_tracks(forest),
    )
    return SynthMovie(masks, truth, forest, corrs, history, division_log)
