"""Label masks, per-cell shape descriptors and binary morphology on pixel sets.

A pixel set is an ``(n, 2)`` integer array of ``(row, col)`` coordinates with
no duplicate rows. Coordinates may go negative after a translation; clipping
to a frame only happens when overlaps are evaluated.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import MaskFormatError

TEXT_MAGIC = "P-LABELS"
BINARY_MAGIC = b"CTRK"

PixelSet = np.ndarray


@dataclass(eq=False)
class LabelMask:
    """One segmented frame: 0 is background, k > 0 are the pixels of cell k."""

    labels: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise MaskFormatError(f"label grid must be 2D and non-empty, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise MaskFormatError("label grid must hold integers")
        if labels.size and labels.min() < 0:
            raise MaskFormatError("negative label in grid")
        self.labels = labels.astype(np.int64, copy=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def cell_ids(self) -> np.ndarray:
        ids = np.unique(self.labels)
        return ids[ids > 0]


@dataclass(eq=False)
class CellRecord:
    id: int
    pixels: PixelSet
    centroid: tuple[float, float]
    area: int
    length: float
    width: float
    orientation: float
    covariance: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------- I/O


def load_label_mask(path, frame_index: int = 0) -> LabelMask:
    """Read a text (``P-LABELS``) or binary (``CTRK``) mask file."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == BINARY_MAGIC:
        return _parse_binary(data, path, frame_index)
    return _parse_text(data, path, frame_index)


def _parse_binary(data: bytes, path: Path, frame_index: int) -> LabelMask:
    if len(data) < 8:
        raise MaskFormatError(f"{path}: truncated header at offset {len(data)}")
    width, height = struct.unpack("<HH", data[4:8])
    expected = 8 + 2 * width * height
    if width < 1 or height < 1:
        raise MaskFormatError(f"{path}: zero-sized grid in header at offset 4")
    if len(data) != expected:
        raise MaskFormatError(
            f"{path}: expected {expected} bytes for {width}x{height} grid, "
            f"found {len(data)} (bad data at offset {min(len(data), expected)})"
        )
    grid = np.frombuffer(data, dtype="<u2", offset=8).reshape(height, width)
    return LabelMask(grid.astype(np.int64), frame_index)


def _parse_text(data: bytes, path: Path, frame_index: int) -> LabelMask:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MaskFormatError(f"{path}: not an ASCII label file (offset {exc.start})") from None
    lines = text.splitlines()
    if not lines:
        raise MaskFormatError(f"{path}: line 1: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != TEXT_MAGIC:
        raise MaskFormatError(f"{path}: line 1: expected '{TEXT_MAGIC} <width> <height>'")
    try:
        width, height = int(head[1]), int(head[2])
    except ValueError:
        raise MaskFormatError(f"{path}: line 1: width/height must be integers") from None
    if width < 1 or height < 1:
        raise MaskFormatError(f"{path}: line 1: width and height must be >= 1")
    body = lines[1:]
    # tolerate one trailing blank line only
    while body and not body[-1].strip() and len(body) > height:
        body.pop()
    if len(body) != height:
        raise MaskFormatError(f"{path}: expected {height} grid rows, found {len(body)}")
    grid = np.empty((height, width), dtype=np.int64)
    for i, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != width:
            raise MaskFormatError(f"{path}: line {i + 2}: expected {width} values, found {len(tokens)}")
        try:
            row = [int(tok) for tok in tokens]
        except ValueError:
            raise MaskFormatError(f"{path}: line {i + 2}: non-integer label") from None
        if min(row) < 0:
            raise MaskFormatError(f"{path}: line {i + 2}: negative label")
        grid[i] = row
    return LabelMask(grid, frame_index)


def save_label_mask(mask: LabelMask, path, fmt: str = "text") -> None:
    path = Path(path)
    if fmt == "text":
        rows = [" ".join(map(str, row)) for row in mask.labels.tolist()]
        payload = f"{TEXT_MAGIC} {mask.width} {mask.height}\n" + "\n".join(rows) + "\n"
        path.write_bytes(payload.encode("ascii"))
    elif fmt == "binary":
        if mask.width > 0xFFFF or mask.height > 0xFFFF:
            raise MaskFormatError("binary masks are limited to 65535x65535")
        if mask.labels.max(initial=0) > 0xFFFF:
            raise MaskFormatError("binary masks hold 16-bit labels only")
        header = BINARY_MAGIC + struct.pack("<HH", mask.width, mask.height)
        path.write_bytes(header + mask.labels.astype("<u2").tobytes())
    else:
        raise ValueError(f"unknown mask format {fmt!r}")


def read_manifest(path) -> list[Path]:
    """Mask paths in frame order; relative entries resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    entries = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        entries.append(p if p.is_absolute() else base / p)
    return entries


def write_manifest(paths, path) -> None:
    path = Path(path)
    lines = ["# celltrack movie manifest, one mask per frame"]
    for p in paths:
        p = Path(p)
        try:
            p = Path(os.path.relpath(p, path.parent))
        except ValueError:
            pass
        lines.append(p.as_posix())
    path.write_text("\n".join(lines) + "\n")


def load_movie(manifest) -> list[LabelMask]:
    return [load_label_mask(p, i) for i, p in enumerate(read_manifest(manifest))]


# ------------------------------------------------------------ descriptors


def principal_axes(cell) -> tuple[float, float, float]:
    """Eigenvalues (major, minor) of the pixel coordinate covariance and the major-axis angle.

    The angle is measured from the column axis towards the row axis and wrapped
    into [-pi/2, pi/2).
    """
    pixels = cell.pixels if isinstance(cell, CellRecord) else np.asarray(cell)
    cov = coordinate_covariance(pixels)
    return _axes_from_cov(cov)


def coordinate_covariance(pixels: PixelSet) -> np.ndarray:
    pts = np.asarray(pixels, dtype=float)
    if len(pts) <= 1:
        return np.zeros((2, 2))
    centered = pts - pts.mean(axis=0)
    return centered.T @ centered / len(pts)


def _axes_from_cov(cov: np.ndarray) -> tuple[float, float, float]:
    evals, evecs = np.linalg.eigh(cov)
    lam2, lam1 = (max(float(v), 0.0) for v in evals)
    if lam1 == 0.0:
        return 0.0, 0.0, 0.0
    v_row, v_col = evecs[:, 1]
    angle = math.atan2(v_row, v_col)
    if angle >= math.pi / 2:
        angle -= math.pi
    elif angle < -math.pi / 2:
        angle += math.pi
    if abs(angle) < 1e-15:
        angle = 0.0
    return lam1, lam2, angle


def make_cell(cell_id: int, pixels: PixelSet) -> CellRecord:
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    cov = coordinate_covariance(pixels)
    lam1, lam2, angle = _axes_from_cov(cov)
    c = pixels.mean(axis=0)
    return CellRecord(
        id=int(cell_id),
        pixels=pixels,
        centroid=(float(c[0]), float(c[1])),
        area=len(pixels),
        length=4.0 * math.sqrt(lam1),
        width=4.0 * math.sqrt(lam2),
        orientation=angle,
        covariance=cov,
    )


def extract_cells(mask: LabelMask) -> list[CellRecord]:
    """One record per distinct nonzero label, ordered by label."""
    grid = mask.labels
    rows, cols = np.nonzero(grid)
    if len(rows) == 0:
        return []
    labels = grid[rows, cols]
    order = np.argsort(labels, kind="stable")
    labels, rows, cols = labels[order], rows[order], cols[order]
    ids, starts = np.unique(labels, return_index=True)
    bounds = list(starts[1:]) + [len(labels)]
    coords = np.stack([rows, cols], axis=1).astype(np.int64)
    return [make_cell(int(i), coords[s:e]) for i, s, e in zip(ids, starts, bounds)]


def frame_statistics(cells) -> tuple[float, float, tuple[float, float]]:
    """Mean length, mean width and the area-weighted colony centroid."""
    if not cells:
        raise ValueError("no cells")
    lengths = np.array([c.length for c in cells])
    widths = np.array([c.width for c in cells])
    areas = np.array([c.area for c in cells], dtype=float)
    cents = np.array([c.centroid for c in cells])
    centroid = (areas[:, None] * cents).sum(axis=0) / areas.sum()
    return float(lengths.mean()), float(widths.mean()), (float(centroid[0]), float(centroid[1]))


# ------------------------------------------------------------- morphology


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@lru_cache(maxsize=64)
def _disk(rho: int) -> np.ndarray:
    span = np.arange(-rho, rho + 1)
    dr, dc = np.meshgrid(span, span, indexing="ij")
    inside = dr * dr + dc * dc <= rho * rho
    offs = np.stack([dr[inside], dc[inside]], axis=1).astype(np.int64)
    offs.setflags(write=False)
    return offs


def disk_offsets(radius: float) -> np.ndarray:
    """Offsets of the discrete disk; the radius is rounded half-up first."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    return _disk(round_half_up(radius))


def dilate(pixels: PixelSet, radius: float) -> PixelSet:
    """Minkowski sum of ``pixels`` with the discrete disk of ``radius``."""
    pts = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    offs = disk_offsets(radius)
    if len(offs) == 1 or len(pts) == 0:
        return np.unique(pts, axis=0)
    summed = (pts[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    return np.unique(summed, axis=0)


def pixel_keys(pixels: PixelSet) -> np.ndarray:
    pts = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    return pts[:, 0] * (1 << 32) + (pts[:, 1] + (1 << 31))


def touches(a: PixelSet, b: PixelSet) -> bool:
    ka, kb = pixel_keys(a), pixel_keys(b)
    if len(ka) == 0 or len(kb) == 0:
        return False
    return bool(np.isin(ka, kb).any())


def translate(pixels: PixelSet, offset) -> PixelSet:
    return np.asarray(pixels, dtype=np.int64) + np.asarray(offset, dtype=np.int64)
