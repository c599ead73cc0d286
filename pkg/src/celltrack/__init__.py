"""Tracking of single cells in crowded bacterial colonies by dynamic neighborhood matching."""
from .errors import CellTrackError, ConfigError, InvariantError, MaskFormatError, NoOverlapError
from .geometry import (
    CellRecord,
    LabelMask,
    dilate,
    extract_cells,
    frame_statistics,
    load_label_mask,
    load_movie,
    principal_axes,
    save_label_mask,
    touches,
)
from .matching import Correspondence, MatchConfig, track_frame_pair
from .tracker import track_movie
from .lineage import LineageForest, division_tree, export_forest, extract_tracks, import_forest
from .evaluation import EvalReport, GroundTruth, evaluate, frame_tdr, match_accuracy, track_er
from .synth import SynthConfig, generate_movie

__version__ = "0.1.0"
