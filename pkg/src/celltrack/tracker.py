"""Whole-movie tracking: run the frame-pair matcher over consecutive frames and grow the lineage forest."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .geometry import extract_cells
from .lineage import LineageForest, append_correspondence, init_forest
from .matching import MatchConfig, track_frame_pair

log = logging.getLogger(__name__)


@dataclass(eq=False)
class MovieResult:
    correspondences: list = field(default_factory=list)
    forest: LineageForest | None = None
    cell_counts: list = field(default_factory=list)


def track_movie(masks, cfg: MatchConfig | None = None) -> MovieResult:
    cfg = cfg or MatchConfig()
    if len(masks) < 2:
        raise ValueError("a movie needs at least two frames")
    cells = extract_cells(masks[0])
    forest = init_forest(cells, masks[0].frame_index)
    result = MovieResult(forest=forest, cell_counts=[len(cells)])
    for f_t, f_t1 in zip(masks, masks[1:]):
        corr = track_frame_pair(f_t, f_t1, cfg)
        cells = extract_cells(f_t1)
        append_correspondence(forest, corr, cells)
        result.correspondences.append(corr)
        result.cell_counts.append(len(cells))
        log.info(
            "frames %d->%d: %d cells, %d unmatched, T used %s",
            f_t.frame_index, f_t1.frame_index, len(cells), len(corr.unmatched_daughters), corr.thresholds_used,
        )
    return result
