"""Neighborhood matching between consecutive frames and the frame-pair driver.

For one neighborhood of unmatched daughter cells (frame t+1) every candidate
placement in frame t is scored with a Jaccard matrix (daughters x fathers).
The placement with the largest sum of row maxima wins; each daughter is then
assigned its row-argmax father and the matching is accepted only if every
chosen father's summed score lies in (T, 1].

The driver sweeps the unmatched daughters at a falling threshold T. At the
last level two clean-up passes follow: leftovers are retried alone or paired
with one nearby leftover, and a leftover touching a matched cell may take
that cell's father as a division when the pair fits the father better.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvariantError, NoOverlapError
from .geometry import (
    LabelMask,
    extract_cells,
    frame_statistics,
    pixel_keys,
    round_half_up,
)
from .neighborhood import (
    Neighborhood,
    build_neighborhood,
    candidate_pool,
    colony_radius,
    layer_bound,
)
from .search_region import CandidateSet, knn_region, region_parameters, select_candidates

log = logging.getLogger(__name__)

PROLIFERATION = "proliferation"
DIVISION = "division"
OVERSEGMENTATION = "oversegmentation"
UNMATCHED = "unmatched"


@dataclass
class MatchConfig:
    T_init: float = 0.7
    T_min: float = 0.5
    T_step: float = 0.05
    max_marks: int = 3
    L_max: int = 3
    alpha_k: float = 0.5
    alpha_l: float = 0.03
    upper_bound_inclusive: bool = True
    refine_steps: int = 8
    minimal_fallback: bool = True
    sister_recovery: bool = True

    def __post_init__(self):
        if not (0.5 <= self.T_min <= self.T_init < 1):
            raise ConfigError("need 0.5 <= T_min <= T_init < 1")
        if self.T_step <= 0:
            raise ConfigError("T_step must be positive")
        if self.max_marks < 1:
            raise ConfigError("max_marks must be >= 1")
        if self.L_max < 1:
            raise ConfigError("L_max must be >= 1")
        if self.alpha_k <= 0 or self.alpha_l <= 0:
            raise ConfigError("alpha_k and alpha_l must be positive")
        if self.refine_steps < 0:
            raise ConfigError("refine_steps must be >= 0")

    def thresholds(self) -> list[float]:
        out = []
        i = 0
        while True:
            T = round(self.T_init - i * self.T_step, 12)
            if T < self.T_min - 1e-9:
                return out
            out.append(T)
            i += 1


@dataclass(eq=False)
class ScoreMatrix:
    rows: list[int]
    cols: np.ndarray
    values: np.ndarray
    placement: tuple[int, int]
    offset: tuple[int, int] = (0, 0)


@dataclass(eq=False)
class ReducedScoreMatrix:
    rows: list[int]
    cols: list[int]
    values: np.ndarray

    def assignments(self) -> dict[int, tuple[int, float]]:
        """daughter -> (father, score) for every row with a nonzero entry."""
        out = {}
        for i, d in enumerate(self.rows):
            nz = np.flatnonzero(self.values[i])
            if len(nz):
                j = nz[0]
                out[d] = (self.cols[j], float(self.values[i, j]))
        return out


@dataclass
class Correspondence:
    frame_t: int
    pairs: list[tuple[int, int]] = field(default_factory=list)
    scores: dict[int, float] = field(default_factory=dict)
    unmatched_daughters: list[int] = field(default_factory=list)
    thresholds_used: list[float] = field(default_factory=list)
    diagnostics: dict[int, str] = field(default_factory=dict)

    @property
    def kinds(self) -> dict[int, str]:
        counts = defaultdict(int)
        for _, f in self.pairs:
            counts[f] += 1
        return {f: _kind(n) for f, n in counts.items()}

    def father_of(self) -> dict[int, int]:
        return {d: f for d, f in self.pairs}

    def pair_set(self) -> set[tuple[int, int]]:
        """Daughter/father pairs, unmatched daughters paired with -1."""
        return set(self.pairs) | {(d, -1) for d in self.unmatched_daughters}


def _kind(n: int) -> str:
    if n == 1:
        return PROLIFERATION
    if n == 2:
        return DIVISION
    return OVERSEGMENTATION


class FatherFrame:
    """Frame t seen from the matcher: label grid, cell areas and which fathers are still free."""

    def __init__(self, mask: LabelMask):
        self.labels = mask.labels
        self.height, self.width = mask.shape
        flat = self.labels.ravel()
        self.areas = np.bincount(flat, minlength=1).astype(np.int64)
        self.available = self.areas > 0
        self.available[0] = False

    def remove(self, label: int) -> None:
        self.available[label] = False

    def in_bounds(self, rc) -> bool:
        return 0 <= rc[0] < self.height and 0 <= rc[1] < self.width


# ---------------------------------------------------------------- scores


def overlap_score(a, b) -> float:
    """Jaccard index of two pixel sets."""
    ka, kb = np.unique(pixel_keys(a)), np.unique(pixel_keys(b))
    if len(ka) == 0 and len(kb) == 0:
        raise ValueError("overlap of two empty sets is undefined")
    inter = len(np.intersect1d(ka, kb, assume_unique=True))
    return inter / (len(ka) + len(kb) - inter)


def _rounded_centroid(nb: Neighborhood) -> np.ndarray:
    return np.array([round_half_up(nb.centroid[0]), round_half_up(nb.centroid[1])], dtype=np.int64)


def _as_frame(f_t) -> FatherFrame:
    if isinstance(f_t, FatherFrame):
        return f_t
    if isinstance(f_t, LabelMask):
        return FatherFrame(f_t)
    return FatherFrame(LabelMask(np.asarray(f_t)))


def _score_offsets(nb: Neighborhood, offsets: np.ndarray, frame: FatherFrame):
    """Jaccard tensor (placement, daughter, father) for a batch of integer offsets.

    Returns the father labels (ascending) hit by any placement and the tensor.
    Daughter pixels that land outside the frame are dropped from the
    intersection but still count towards the union.
    """
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    areas_i = np.array([m.area for m in nb.members], dtype=np.int64)
    n = len(areas_i)
    member_idx = np.repeat(np.arange(n), areas_i)
    P = len(offsets)
    shifted = nb.pixels[None, :, :] + offsets[:, None, :]
    r, c = shifted[..., 0], shifted[..., 1]
    inb = (r >= 0) & (r < frame.height) & (c >= 0) & (c < frame.width)
    lab = np.zeros(r.shape, dtype=np.int64)
    lab[inb] = frame.labels[r[inb], c[inb]]
    lab[~frame.available[lab]] = 0
    sel = lab > 0
    if not sel.any():
        return np.zeros(0, dtype=np.int64), np.zeros((P, n, 0))
    p_idx = np.broadcast_to(np.arange(P)[:, None], sel.shape)[sel]
    m_idx = np.broadcast_to(member_idx[None, :], sel.shape)[sel]
    cols, f_idx = np.unique(lab[sel], return_inverse=True)
    C = len(cols)
    inter = np.bincount((p_idx * n + m_idx) * C + f_idx, minlength=P * n * C).reshape(P, n, C)
    union = areas_i[None, :, None] + frame.areas[cols][None, None, :] - inter
    return cols, inter / union


def score_at(neighborhood: Neighborhood, placement, f_t) -> ScoreMatrix:
    """Score matrix with the neighborhood centroid moved onto ``placement``.

    Columns are the (still available) fathers overlapped by at least one
    translated daughter.
    """
    frame = _as_frame(f_t)
    placement = np.asarray(placement, dtype=np.int64)
    offset = placement - _rounded_centroid(neighborhood)
    cols, J = _score_offsets(neighborhood, offset[None, :], frame)
    return _matrix_from(neighborhood, cols, J[0], placement, offset)


def _matrix_from(nb, cols, values, placement, offset) -> ScoreMatrix:
    keep = values.any(axis=0) if values.size else np.zeros(0, dtype=bool)
    return ScoreMatrix(
        rows=list(nb.member_ids),
        cols=np.asarray(cols)[keep],
        values=values[:, keep] if values.size else np.zeros((len(nb.member_ids), 0)),
        placement=(int(placement[0]), int(placement[1])),
        offset=(int(offset[0]), int(offset[1])),
    )


def overall_score(S) -> float:
    """Sum over daughters of their best overlap with any father."""
    values = S.values if isinstance(S, ScoreMatrix) else np.asarray(S, dtype=float)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError("score matrix needs at least one row")
    if values.shape[1] == 0:
        return 0.0
    return float(values.max(axis=1).sum())


def reduce_scores(S: ScoreMatrix) -> ReducedScoreMatrix:
    """Keep only each row's maximum (lowest father label wins ties); drop untouched fathers."""
    values = S.values
    n = values.shape[0]
    if values.shape[1] == 0:
        return ReducedScoreMatrix(list(S.rows), [], np.zeros((n, 0)))
    order = np.argsort(S.cols, kind="stable")
    cols = np.asarray(S.cols)[order]
    values = values[:, order]
    best = values.argmax(axis=1)
    rowmax = values[np.arange(n), best]
    chosen = sorted({int(cols[j]) for j, v in zip(best, rowmax) if v > 0})
    pos = {f: i for i, f in enumerate(chosen)}
    out = np.zeros((n, len(chosen)))
    for i, (j, v) in enumerate(zip(best, rowmax)):
        if v > 0:
            out[i, pos[int(cols[j])]] = v
    return ReducedScoreMatrix(list(S.rows), chosen, out)


def best_placement(neighborhood: Neighborhood, candidates, f_t, refine_steps: int = 0, region=None):
    """Pick the candidate placement with the highest overall score.

    Ties go to the earliest candidate. With ``refine_steps > 0`` the winner is
    then hill-climbed over its 8-connected integer neighbors, moving only on a
    strict improvement and, when ``region`` (the full search area) is given,
    never leaving it.

    Returns ``(S, S_hat, fathers)``; raises :class:`NoOverlapError` when no
    placement overlaps any available father.
    """
    frame = _as_frame(f_t)
    points = candidates.points if isinstance(candidates, CandidateSet) else np.asarray(candidates)
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if len(points) == 0:
        raise ValueError("no candidate placements")
    base = _rounded_centroid(neighborhood)
    offsets = points - base
    cols, J = _score_offsets(neighborhood, offsets, frame)
    if J.shape[2] == 0:
        raise NoOverlapError("no placement overlaps any father")
    totals = J.max(axis=2).sum(axis=1)
    b = int(np.argmax(totals))
    best_total = float(totals[b])
    best_offset, best_cols, best_J = offsets[b], cols, J[b]

    allowed = None
    if region is not None:
        allowed = {(int(a), int(b)) for a, b in np.asarray(region, dtype=np.int64).reshape(-1, 2)}
    steps = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc], dtype=np.int64)
    for _ in range(refine_steps):
        trial = best_offset[None, :] + steps
        ok = np.array([
            frame.in_bounds(base + t) and (allowed is None or (int(base[0] + t[0]), int(base[1] + t[1])) in allowed)
            for t in trial
        ])
        trial = trial[ok]
        if not len(trial):
            break
        tcols, tJ = _score_offsets(neighborhood, trial, frame)
        if tJ.shape[2] == 0:
            break
        ttot = tJ.max(axis=2).sum(axis=1)
        t = int(np.argmax(ttot))
        if ttot[t] <= best_total + 1e-12:
            break
        best_total = float(ttot[t])
        best_offset, best_cols, best_J = trial[t], tcols, tJ[t]

    if best_total <= 0:
        raise NoOverlapError("no placement overlaps any father")
    S = _matrix_from(neighborhood, best_cols, best_J, base + best_offset, best_offset)
    S_hat = reduce_scores(S)
    return S, S_hat, set(S_hat.cols)


def father_totals(S_hat: ReducedScoreMatrix) -> dict[int, float]:
    sums = S_hat.values.sum(axis=0) if S_hat.values.size else []
    return {f: float(v) for f, v in zip(S_hat.cols, sums)}


def daughter_counts(S_hat: ReducedScoreMatrix) -> dict[int, int]:
    counts = (S_hat.values > 0).sum(axis=0) if S_hat.values.size else []
    return {f: int(v) for f, v in zip(S_hat.cols, counts)}


def validate(totals: dict, T: float, cfg: MatchConfig, counts: dict | None = None) -> bool:
    """Accept iff every father's total lies in (T, 1) -- or (T, 1] in inclusive mode --
    and no father claims more than two daughters."""
    if not totals:
        return False
    for f, o in totals.items():
        if not o > T:
            return False
        if cfg.upper_bound_inclusive:
            if o > 1.0 + 1e-12:
                return False
        elif not o < 1.0:
            return False
    if counts and max(counts.values()) > 2:
        return False
    return True


# ----------------------------------------------------------------- driver


class _PairState:
    """Book-keeping for one frame pair; ``active``, ``matched`` and ``excluded`` partition the daughters."""

    def __init__(self, labels):
        self.all = set(labels)
        self.active: set[int] = set(labels)
        self.excluded: set[int] = set()
        self.matched: dict[int, tuple[int, float]] = {}
        self.marks: dict[int, int] = defaultdict(int)

    def check(self) -> None:
        a, m, e = self.active, set(self.matched), self.excluded
        if a & m or a & e or m & e or (a | m | e) != self.all:
            raise InvariantError("daughter bookkeeping lost or duplicated a cell")


def track_frame_pair(f_t: LabelMask, f_t1: LabelMask, cfg: MatchConfig | None = None, observer=None) -> Correspondence:
    """Match every cell of ``f_t1`` to a father in ``f_t``.

    ``observer(event, state)`` is called after every accept or reject, mainly
    for tests that audit the bookkeeping.
    """
    cfg = cfg or MatchConfig()
    cells_t1 = extract_cells(f_t1)
    if not cells_t1 or not f_t.cell_ids().size:
        raise ValueError("both frames must contain cells")
    frame = FatherFrame(f_t)
    by_id = {c.id: c for c in cells_t1}
    avg_len, avg_w, cen = frame_statistics(cells_t1)
    R = max(avg_len, 1.0)
    r = max(avg_w, 1.0)
    crad = colony_radius(cells_t1, cen)

    state = _PairState(by_id)
    corr = Correspondence(frame_t=f_t.frame_index)
    cache: dict = {}
    version = 0
    reasons: dict[int, str] = {}

    def search(nb: Neighborhood, wide: bool = False):
        """Best placement of ``nb`` against the free fathers: ``(S, S_hat)`` or None."""
        k, l = region_parameters(nb.pixel_count, cfg.alpha_k, cfg.alpha_l)
        if wide:
            # the minimal neighborhoods of the fallback have tiny, elongated
            # regions: search at least a cell-width disk's worth of pixels,
            # exhaustively, with the shape widened by a cell width sideways
            k = l = max(k, round_half_up(math.pi * r**2))
            cov = nb.covariance + r * r * np.eye(2)
        else:
            cov = nb.covariance
        region = knn_region((frame.width, frame.height), nb.centroid, cov, k)
        cands = select_candidates(region, l)
        try:
            S, S_hat, _ = best_placement(nb, cands, frame, cfg.refine_steps, region)
        except NoOverlapError:
            return None
        return S, S_hat

    def verdict(S_hat, T: float) -> str | None:
        """None when the matching validates at ``T``, else the reason it does not."""
        totals = father_totals(S_hat)
        counts = daughter_counts(S_hat)
        if validate(totals, T, cfg, counts):
            return None
        if counts and max(counts.values()) > 2:
            return "father claims >2 daughters"
        worst = min(totals.values()) if totals else 0.0
        return f"father total {worst:.3f} outside ({T}, 1]"

    def commit(nb: Neighborhood, S_hat, T: float, mark: bool = True) -> None:
        nonlocal version
        assigned = S_hat.assignments()
        for d, (f, s) in assigned.items():
            state.active.discard(d)
            state.excluded.discard(d)
            state.matched[d] = (f, s)
            frame.remove(f)
        version += 1
        if T not in corr.thresholds_used:
            corr.thresholds_used.append(T)
        orphans = [d for d in nb.member_ids if d not in assigned]
        if orphans:
            reject(orphans, "no overlapping father at the chosen placement", mark)
        elif observer:
            observer("accept", state)

    def reject(ids, why: str, mark: bool = True) -> None:
        for d in ids:
            reasons[d] = why
            if not mark:
                continue
            state.marks[d] += 1
            if state.marks[d] >= cfg.max_marks and d in state.active:
                state.active.discard(d)
                state.excluded.add(d)
        if observer:
            observer("reject", state)

    def attempt(anchor_id: int, T: float) -> None:
        anchor = by_id[anchor_id]
        pool = candidate_pool(anchor, cells_t1, state.active, R)
        L = layer_bound(anchor, cen, crad, cfg.L_max)
        nb = build_neighborhood(anchor, pool, r, L)
        key = (tuple(nb.member_ids), version)
        if key not in cache:
            cache[key] = search(nb)
        found = cache[key]
        if found is None:
            reject(nb.member_ids, "no overlap with any free father")
            return
        why = verdict(found[1], T)
        if why:
            reject(nb.member_ids, why)
        else:
            commit(nb, found[1], T)

    def run_pass(T: float) -> None:
        # sweep the list in ascending label order, wrapping around, so that
        # repeated marks come from different neighborhoods
        last = -1
        while state.active:
            later = [d for d in state.active if d > last]
            last = min(later) if later else min(state.active)
            attempt(last, T)

    def fallback(T: float) -> None:
        # Cells still unmatched at the last threshold usually sit in small clusters whose
        # members were marked together every time. Offer each leftover alone and
        # paired with every touching leftover (a division sister, say), and
        # commit the trial with the best worst-father total first, so a weak
        # fit never takes a father a better fit needs. Removing a father only
        # lowers placements that overlap it, so a cached search stays valid
        # until one of the fathers it overlaps is taken.
        found: dict = {}
        trials: dict[int, list[Neighborhood]] = {}
        for d in sorted(state.excluded):
            anchor = by_id[d]
            # the halves of a split sit one daughter length apart, often just
            # beyond R, and may have drifted a little apart: pair with anything
            # within a doubled dilation and let validation decide
            pool = candidate_pool(anchor, cells_t1, state.excluded, 2 * R)
            near = build_neighborhood(anchor, pool, 2 * r, 1).member_ids[1:]
            trials[d] = [build_neighborhood(anchor, [anchor], r, 0)]
            trials[d] += [build_neighborhood(anchor, [anchor, by_id[e]], 2 * r, 1) for e in near]
        while state.excluded:
            best = None
            for d in sorted(state.excluded):
                for nb in trials[d]:
                    if not state.excluded.issuperset(nb.member_ids):
                        continue
                    key = tuple(nb.member_ids)
                    hit = found.get(key)
                    if hit is not None and hit[0] is not None and not frame.available[hit[0].cols].all():
                        hit = None
                    if hit is None:
                        hit = found[key] = search(nb, wide=True) or (None, None)
                    if hit[1] is None:
                        reasons[d] = "no overlap with any free father"
                        continue
                    why = verdict(hit[1], T)
                    if why:
                        reasons[d] = why
                        continue
                    q = min(father_totals(hit[1]).values())
                    if best is None or q > best[0]:
                        best = (q, nb, hit[1])
            if best is None:
                return
            commit(best[1], best[2], T, mark=False)

    def recover_sisters(T: float) -> None:
        # A fresh daughter can fit its father well enough on its own (or with a
        # sliver of a neighbor) to take it, leaving the sister with no free
        # father. For each leftover, place it together with every touching
        # matched cell against that cell's father and keep the pair when it
        # validates and beats the father's current total. A daughter the pair
        # displaces goes back to the leftovers and gets the same treatment.
        queue = sorted(state.excluded)
        budget = len(cells_t1)
        while queue and budget:
            d = queue.pop(0)
            if d not in state.excluded:
                continue
            anchor = by_id[d]
            sons: dict[int, list[int]] = defaultdict(list)
            for e, (f, _) in state.matched.items():
                sons[f].append(e)
            pool = candidate_pool(anchor, cells_t1, set(state.matched), 2 * R)
            near = build_neighborhood(anchor, pool, r, 1).member_ids[1:]
            best = None
            for m in near:
                f = state.matched[m][0]
                current = sum(state.matched[e][1] for e in sons[f])
                nb = build_neighborhood(anchor, [anchor, by_id[m]], r, 1)
                frame.available[f] = True
                hit = search(nb, wide=True)
                frame.available[f] = False
                if hit is None or verdict(hit[1], T):
                    continue
                assigned = hit[1].assignments()
                if set(assigned) != {d, m} or {g for g, _ in assigned.values()} != {f}:
                    continue
                total = father_totals(hit[1])[f]
                if total > current + 1e-12 and (best is None or total > best[0]):
                    best = (total, m, f, nb, hit[1])
            if best is None:
                continue
            budget -= 1
            _, m, f, nb, S_hat = best
            for e in sons[f]:
                del state.matched[e]
                if e != m:
                    state.excluded.add(e)
                    reasons[e] = "displaced by a better division fit"
                    queue.append(e)
            frame.available[f] = True
            commit(nb, S_hat, T, mark=False)

    remaining: list[int] = []
    levels = cfg.thresholds()
    for T in levels:
        state.marks.clear()
        run_pass(T)
        # excluded cells get one retry at the same threshold
        state.active, state.excluded = state.excluded, set()
        state.marks.clear()
        run_pass(T)
        if cfg.minimal_fallback and state.excluded and T == levels[-1]:
            fallback(T)
        if cfg.sister_recovery and state.excluded and T == levels[-1]:
            recover_sisters(T)
        remaining = sorted(state.excluded)
        if not remaining:
            break
        state.active, state.excluded = set(remaining), set()
        log.debug("frame %d: %d cells left, lowering T below %.2f", f_t.frame_index, len(remaining), T)
    else:
        state.excluded, state.active = set(remaining), set()

    for d in sorted(state.matched):
        f, s = state.matched[d]
        corr.pairs.append((d, f))
        corr.scores[d] = s
    corr.unmatched_daughters = sorted(state.excluded | state.active)
    corr.diagnostics = {d: reasons.get(d, "") for d in corr.unmatched_daughters}
    return corr


# --------------------------------------------------------------- CSV I/O

CSV_COLUMNS = ["frame_t", "daughter_label", "father_label", "kind", "score"]


def correspondence_rows(corr: Correspondence):
    kinds = corr.kinds
    rows = []
    for d, f in sorted(corr.pairs):
        s = corr.scores.get(d, float("nan"))
        rows.append((corr.frame_t, d, f, kinds[f], s))
    for d in corr.unmatched_daughters:
        rows.append((corr.frame_t, d, -1, UNMATCHED, 0.0))
    rows.sort(key=lambda row: row[1])
    return rows


def _fmt_score(s: float) -> str:
    return "nan" if math.isnan(s) else f"{s:.6f}"


def correspondences_to_csv(corrs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for corr in corrs:
        for t, d, f, kind, s in correspondence_rows(corr):
            w.writerow([t, d, f, kind, _fmt_score(s)])
    return buf.getvalue()


def correspondences_from_csv(text: str) -> list[Correspondence]:
    """Parse one or many frame pairs; returned in ascending ``frame_t`` order."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != CSV_COLUMNS:
        raise ValueError(f"expected CSV columns {CSV_COLUMNS}, got {reader.fieldnames}")
    out: dict[int, Correspondence] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            t = int(row["frame_t"])
            d = int(row["daughter_label"])
            f = int(row["father_label"])
            s = float(row["score"]) if row["score"] not in ("", None) else float("nan")
        except (TypeError, ValueError):
            raise ValueError(f"line {lineno}: malformed correspondence row") from None
        corr = out.setdefault(t, Correspondence(frame_t=t))
        if f < 0:
            corr.unmatched_daughters.append(d)
        else:
            corr.pairs.append((d, f))
            corr.scores[d] = s
    for corr in out.values():
        corr.unmatched_daughters.sort()
        corr.pairs.sort()
    return [out[t] for t in sorted(out)]
