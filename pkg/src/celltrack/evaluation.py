"""Tracking quality against ground truth.

* frame-based tracker detection rate: fraction of frame pairs tracked without
  a single wrong, missing or spurious correspondence;
* track-based error rate: (false alarm tracks + track detection failures) over
  the number of ground-truth tracks inside a frame window;
* match accuracy: correct daughter/father pairs over ground-truth pairs.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .lineage import Track, extract_tracks, forest_from_correspondences
from .matching import Correspondence, correspondences_from_csv


@dataclass
class GroundTruth:
    pairs: dict = field(default_factory=dict)  # frame_t -> {(daughter, father)}
    tracks: list = field(default_factory=list)
    frame_window: tuple | None = None

    @classmethod
    def from_correspondences(cls, corrs, frame0_labels=None, frame_window=None) -> "GroundTruth":
        corrs = sorted(corrs, key=lambda c: c.frame_t)
        if frame0_labels is None:
            frame0_labels = sorted({f for _, f in corrs[0].pairs}) if corrs else []
        forest = forest_from_correspondences(frame0_labels, corrs)
        return cls(
            pairs={c.frame_t: c.pair_set() for c in corrs},
            tracks=extract_tracks(forest),
            frame_window=frame_window,
        )

    @classmethod
    def from_csv(cls, text: str, frame_window=None) -> "GroundTruth":
        return cls.from_correspondences(correspondences_from_csv(text), frame_window=frame_window)


@dataclass
class EvalReport:
    TP: int | None = None
    FAT: int | None = None
    TDF: int | None = None
    GT: int | None = None
    TDR: float | None = None
    ER: float | None = None
    ACC: float | None = None
    histogram: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for key in ("TP", "FAT", "TDF", "GT", "TDR", "ER", "ACC"):
            val = getattr(self, key)
            if val is None:
                continue
            lines.append(f"{key} = {val:.6f}" if isinstance(val, float) else f"{key} = {val}")
        return "\n".join(lines) + "\n"


def percent(x: float) -> str:
    """Format a rate the way results tables do, e.g. ``97.7%``."""
    return f"{100.0 * x:.1f}%"


def accuracy(tp: int, gt: int) -> float:
    if gt <= 0:
        raise ValueError("GT must be positive")
    return tp / gt


def error_rate(fat: int, tdf: int, gt: int) -> float:
    if gt <= 0:
        raise ValueError("GT must be positive")
    return (fat + tdf) / gt


# ----------------------------------------------------------- frame based


def _pred_sets(predicted) -> dict:
    out = {}
    for p in predicted:
        out[p.frame_t] = p.pair_set() if isinstance(p, Correspondence) else set(p)
    return out


def frame_tdr(predicted, truth: GroundTruth) -> EvalReport:
    pred = _pred_sets(predicted)
    if sorted(pred) != sorted(truth.pairs):
        raise ValueError(f"frame pairs differ: predicted {len(pred)}, truth {len(truth.pairs)}")
    hist = error_histogram(predicted, truth)
    tp = sum(1 for t in truth.pairs if hist[t] == 0)
    gt = len(truth.pairs)
    return EvalReport(TP=tp, GT=gt, TDR=tp / gt if gt else 1.0, histogram=hist)


def error_histogram(predicted, truth) -> dict[int, int]:
    """Size of the symmetric difference between predicted and true pairs, per frame pair."""
    pred = _pred_sets(predicted)
    tpairs = truth.pairs if isinstance(truth, GroundTruth) else _pred_sets(truth)
    return {t: len(pred.get(t, set()) ^ tpairs[t]) for t in sorted(tpairs)}


def histogram_to_csv(hist: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_t", "errors"])
    for t in sorted(hist):
        w.writerow([t, hist[t]])
    return buf.getvalue()


# ----------------------------------------------------------- match based


def match_accuracy(predicted_pairs, truth_pairs) -> EvalReport:
    pred = predicted_pairs.pair_set() if isinstance(predicted_pairs, Correspondence) else set(predicted_pairs)
    true = truth_pairs.pair_set() if isinstance(truth_pairs, Correspondence) else set(truth_pairs)
    tp = len(pred & true)
    gt = len(true)
    return EvalReport(TP=tp, GT=gt, ACC=tp / gt if gt else 1.0)


def error_daughters(predicted_pairs, truth_pairs) -> set[int]:
    """Daughters whose predicted father differs from (or is missing in) the truth."""
    pred = predicted_pairs.pair_set() if isinstance(predicted_pairs, Correspondence) else set(predicted_pairs)
    true = truth_pairs.pair_set() if isinstance(truth_pairs, Correspondence) else set(truth_pairs)
    return {d for d, _ in pred ^ true}


# ----------------------------------------------------------- track based


def restrict_tracks(tracks, window) -> list[tuple]:
    """Tracks alive inside the inclusive ``window``, truncated to it, as (frame, label) tuples."""
    if window is None:
        return [tuple(tr.cells) for tr in tracks]
    start, end = window
    out = []
    for tr in tracks:
        cells = tuple((f, lab) for f, lab in tr.cells if start <= f <= end)
        if cells:
            out.append(cells)
    return out


def track_er(predicted_tracks, truth_tracks, window=None) -> EvalReport:
    """Exact-match track comparison: a track differing in any time point is a false alarm
    (when predicted) and a detection failure (when true)."""
    pred = Counter(restrict_tracks(predicted_tracks, window))
    true = Counter(restrict_tracks(truth_tracks, window))
    gt = sum(true.values())
    if gt == 0:
        raise ValueError("no ground-truth tracks inside the window")
    fat = sum((pred - true).values())
    tdf = sum((true - pred).values())
    tp = sum((pred & true).values())
    return EvalReport(TP=tp, FAT=fat, TDF=tdf, GT=gt, ER=(fat + tdf) / gt)


def tracks_of(corrs, frame0_labels) -> list[Track]:
    return extract_tracks(forest_from_correspondences(frame0_labels, corrs))


def evaluate(predicted, truth: GroundTruth, window=None) -> EvalReport:
    """All three metrics for a movie: TDR over frame pairs, ACC over pooled pairs, ER in ``window``."""
    fr = frame_tdr(predicted, truth)
    pred = _pred_sets(predicted)
    tp = sum(len(pred[t] & truth.pairs[t]) for t in truth.pairs)
    gt = sum(len(s) for s in truth.pairs.values())
    first = min(truth.pairs) if truth.pairs else 0
    roots = sorted({tr.cells[0][1] for tr in truth.tracks if tr.cells[0][0] == first})
    pred_tracks = tracks_of([p for p in predicted], roots)
    tr = track_er(pred_tracks, truth.tracks, window or truth.frame_window)
    return EvalReport(
        TP=tp, FAT=tr.FAT, TDF=tr.TDF, GT=gt,
        TDR=fr.TDR, ER=tr.ER, ACC=tp / gt if gt else 1.0,
        histogram=fr.histogram,
    )


# ------------------------------------------------------------ alignment


def align_labels(pred_mask, truth_mask) -> dict[int, int]:
    """Map each predicted label to the truth label it overlaps most (ties: lowest label)."""
    p = np.asarray(getattr(pred_mask, "labels", pred_mask)).ravel()
    t = np.asarray(getattr(truth_mask, "labels", truth_mask)).ravel()
    sel = (p > 0) & (t > 0)
    pairs = Counter(zip(p[sel].tolist(), t[sel].tolist()))
    best: dict[int, tuple[int, int]] = {}
    for (a, b), n in pairs.items():
        cur = best.get(a)
        if cur is None or n > cur[0] or (n == cur[0] and b < cur[1]):
            best[a] = (n, b)
    return {a: b for a, (_, b) in best.items()}


def relabel_tracks(tracks, mapping_by_frame: dict) -> list[Track]:
    out = []
    for tr in tracks:
        cells = [(f, mapping_by_frame.get(f, {}).get(lab, lab)) for f, lab in tr.cells]
        out.append(Track(cells, tr.series, tr.track_id))
    return out
