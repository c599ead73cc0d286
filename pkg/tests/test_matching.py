import math

import numpy as np
import pytest

from celltrack.errors import ConfigError, NoOverlapError
from celltrack.geometry import LabelMask, extract_cells, round_half_up
from celltrack.matching import (
    DIVISION,
    PROLIFERATION,
    Correspondence,
    FatherFrame,
    MatchConfig,
    ReducedScoreMatrix,
    ScoreMatrix,
    _PairState,
    best_placement,
    correspondences_from_csv,
    correspondences_to_csv,
    daughter_counts,
    father_totals,
    overall_score,
    overlap_score,
    reduce_scores,
    score_at,
    track_frame_pair,
    validate,
)
from celltrack.neighborhood import build_neighborhood

from conftest import brick_colony, capsule_pair_fixture, mask, relabel


def jaccard_oracle(a, b):
    sa, sb = {tuple(p) for p in a}, {tuple(p) for p in b}
    return len(sa & sb) / len(sa | sb)


def shift_grid(grid, dr, dc):
    out = np.zeros_like(grid)
    h, w = grid.shape
    out[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = grid[max(-dr, 0):h - max(dr, 0), max(-dc, 0):w - max(dc, 0)]
    return out


def matrix(values, cols=None):
    values = np.asarray(values, dtype=float)
    cols = np.arange(1, values.shape[1] + 1) if cols is None else np.asarray(cols)
    return ScoreMatrix(list(range(100, 100 + values.shape[0])), cols, values, (0, 0))


# ------------------------------------------------------------------ scores


def test_jaccard_matches_set_oracle_on_10k_pairs():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        a = rng.integers(0, 6, size=(int(rng.integers(1, 12)), 2))
        b = rng.integers(0, 6, size=(int(rng.integers(1, 12)), 2))
        j = overlap_score(a, b)
        assert j == pytest.approx(jaccard_oracle(a, b), abs=1e-12)
        assert j == overlap_score(b, a)
        assert 0.0 <= j <= 1.0


def test_jaccard_examples():
    a = np.array([[0, 0], [0, 1], [0, 2], [0, 3]])
    assert overlap_score(a, a) == 1.0
    assert overlap_score(a, a + [5, 0]) == 0.0
    assert overlap_score(a, a[:2]) == 0.5
    assert overlap_score(np.zeros((0, 2)), a) == 0.0
    with pytest.raises(ValueError):
        overlap_score(np.zeros((0, 2)), np.zeros((0, 2)))


def test_overall_score_is_sum_of_row_maxima():
    assert overall_score(np.array([[0.2, 0.7], [0.9, 0.1]])) == pytest.approx(1.6)
    assert overall_score(np.zeros((2, 0))) == 0.0
    with pytest.raises(ValueError):
        overall_score(np.zeros((0, 3)))


def test_row_max_monotonicity(rng):
    for _ in range(500):
        n, m = (int(v) for v in rng.integers(1, 6, size=2))
        V = rng.uniform(0, 1, size=(n, m)) * (rng.random((n, m)) < 0.6)
        # raising any entry never lowers the score, dropping a father never raises it
        W = V.copy()
        i, j = rng.integers(n), rng.integers(m)
        W[i, j] += rng.uniform(0, 1)
        assert overall_score(W) >= overall_score(V)
        if m > 1:
            assert overall_score(np.delete(V, j, axis=1)) <= overall_score(V) + 1e-12
        # reduction keeps every row maximum and at most one entry per row
        R = reduce_scores(matrix(V))
        assert R.values.shape[1] == len(R.cols)
        assert (np.count_nonzero(R.values, axis=1) <= 1).all()
        np.testing.assert_allclose(R.values.max(axis=1, initial=0), V.max(axis=1), atol=0)
        assert overall_score(R.values) == pytest.approx(overall_score(V)) if R.cols else True


def test_reduce_ties_go_to_lowest_father_label():
    R = reduce_scores(matrix([[0.5, 0.5]], cols=[9, 4]))
    assert R.cols == [4]
    assert R.assignments() == {100: (4, 0.5)}


def test_division_column_sum():
    R = ReducedScoreMatrix([1, 2], [7], np.array([[0.4], [0.45]]))
    assert father_totals(R) == {7: pytest.approx(0.85)}
    assert daughter_counts(R) == {7: 2}


# -------------------------------------------------------------- validation


@pytest.mark.parametrize(
    "totals, counts, T, inclusive, ok",
    [
        ({1: 0.85}, {1: 2}, 0.7, True, True),
        ({1: 0.7}, {1: 1}, 0.7, True, False),
        ({1: 0.71, 2: 0.69}, None, 0.7, True, False),
        ({1: 1.0}, {1: 1}, 0.6, True, True),
        ({1: 1.0}, {1: 1}, 0.6, False, False),
        ({1: 1.2}, {1: 2}, 0.6, True, False),
        ({1: 0.9}, {1: 3}, 0.6, True, False),
        ({}, None, 0.5, True, False),
    ],
)
def test_validate(totals, counts, T, inclusive, ok):
    assert validate(totals, T, MatchConfig(upper_bound_inclusive=inclusive), counts) is ok


def test_thresholds_schedule():
    assert MatchConfig().thresholds() == [0.7, 0.65, 0.6, 0.55, 0.5]
    assert MatchConfig(T_init=0.5, T_min=0.5).thresholds() == [0.5]
    assert MatchConfig(T_init=0.62, T_step=0.1).thresholds() == [0.62, 0.52]


@pytest.mark.parametrize(
    "kw", [dict(T_min=0.4), dict(T_init=1.0), dict(T_step=0), dict(max_marks=0), dict(L_max=0), dict(alpha_k=0), dict(refine_steps=-1)]
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        MatchConfig(**kw)


# --------------------------------------------------------------- placement


def test_score_at_identity_and_out_of_frame():
    grid = brick_colony(1, 2, origin=(2, 2), shape=(12, 40))
    cells = extract_cells(mask(grid))
    nb = build_neighborhood(cells[0], cells[:1], 1, 0)
    cen = (round_half_up(nb.centroid[0]), round_half_up(nb.centroid[1]))
    S = score_at(nb, cen, mask(grid))
    assert list(S.cols) == [1] and S.values[0, 0] == 1.0
    # shifted up by 4: two of its 6 rows leave the frame but still count in the
    # union, and 2 rows of 14 pixels overlap the original
    S = score_at(nb, (cen[0] - 4, cen[1]), mask(grid))
    assert S.values[0, 0] == pytest.approx(28 / (84 + 84 - 28))


def test_best_placement_prefers_first_candidate_on_ties():
    grid = np.zeros((20, 20), dtype=int)
    grid[5:8, 5:8] = 1
    nb = build_neighborhood(extract_cells(mask(grid))[0], [], 1, 0)
    # both placements give a perfect score against copies of the cell
    big = np.zeros((20, 40), dtype=int)
    big[5:8, 5:8] = 1
    big[5:8, 25:28] = 2
    S, S_hat, fathers = best_placement(nb, [(6, 26), (6, 6)], mask(big))
    assert S.placement == (6, 26) and fathers == {2}
    S, _, fathers = best_placement(nb, [(6, 6), (6, 26)], mask(big))
    assert S.offset == (0, 0) and fathers == {1}


def test_best_placement_refinement_stays_in_region():
    grid = np.zeros((30, 30), dtype=int)
    grid[10:14, 10:16] = 1
    nb = build_neighborhood(extract_cells(mask(grid))[0], [], 1, 0)
    frame = mask(shift_grid(grid, 0, 3))
    S, _, _ = best_placement(nb, [(11, 13)], frame, refine_steps=8)
    assert S.values.max() == 1.0 and S.offset == (0, 3)
    region = [(11, 13), (11, 14)]
    S, _, _ = best_placement(nb, [(11, 13)], frame, refine_steps=8, region=region)
    assert S.placement == (11, 14)


def test_best_placement_no_overlap():
    grid = np.zeros((30, 30), dtype=int)
    grid[2:4, 2:4] = 1
    nb = build_neighborhood(extract_cells(mask(grid))[0], [], 1, 0)
    with pytest.raises(NoOverlapError):
        best_placement(nb, [(25, 25)], mask(shift_grid(grid, 10, 10)))


def test_removed_fathers_are_invisible():
    grid = brick_colony(1, 2, origin=(2, 2), shape=(12, 40))
    frame = FatherFrame(mask(grid))
    cells = extract_cells(mask(grid))
    nb = build_neighborhood(cells[0], cells[:1], 1, 0)
    frame.remove(1)
    S = score_at(nb, (round_half_up(nb.centroid[0]), round_half_up(nb.centroid[1])), frame)
    assert len(S.cols) == 0


# ------------------------------------------------------------- frame pairs


def test_three_cells_translated():
    grid = np.zeros((40, 40), dtype=int)
    grid[5:10, 5:20] = 1
    grid[11:16, 5:20] = 2
    grid[5:16, 21:26] = 3
    moved, old_to_new = relabel(shift_grid(grid, 2, 1), np.random.default_rng(3))
    corr = track_frame_pair(mask(grid, 0), mask(moved, 1))
    assert corr.unmatched_daughters == []
    assert dict(corr.pairs) == {new: old for old, new in old_to_new.items()}
    assert all(s == 1.0 for s in corr.scores.values())
    assert set(corr.kinds.values()) == {PROLIFERATION}
    assert corr.thresholds_used == [0.7]


def test_clean_division_is_found():
    father, kids = capsule_pair_fixture(0.3, (0, 0), (0, 0))
    corr = track_frame_pair(mask(father, 0), mask(kids, 1))
    assert sorted(corr.pairs) == [(3, 5), (9, 5)]
    assert corr.kinds == {5: DIVISION}


def test_brick_colony_with_motion(rng):
    grid = brick_colony(4, 4, gap=1)
    for shift in [(0, 0), (1, -2), (-2, 2)]:
        moved, old_to_new = relabel(shift_grid(grid, *shift), rng)
        corr = track_frame_pair(mask(grid), mask(moved, 1))
        assert dict(corr.pairs) == {new: old for old, new in old_to_new.items()}


def test_partition_invariant_after_every_event():
    from celltrack.synth import SynthConfig, generate_movie

    movie = generate_movie(SynthConfig(seed=3, frames=24, grid=(256, 256), jitter=1.5))
    events = []

    def observer(event, state):
        state.check()
        assert sum(state.marks.values()) >= 0
        events.append(event)

    for a, b in zip(movie.masks, movie.masks[1:]):
        corr = track_frame_pair(a, b, observer=observer)
        ids = set(b.cell_ids().tolist())
        assert {d for d, _ in corr.pairs} | set(corr.unmatched_daughters) == ids
        assert not {d for d, _ in corr.pairs} & set(corr.unmatched_daughters)
        per_father = [f for _, f in corr.pairs]
        assert all(per_father.count(f) <= 2 for f in set(per_father))
    assert "accept" in events and "reject" in events


def test_pair_state_check_detects_corruption():
    from celltrack.errors import InvariantError

    st = _PairState([1, 2, 3])
    st.check()
    st.excluded.add(1)
    with pytest.raises(InvariantError):
        st.check()
    st.active.discard(1)
    st.check()
    st.excluded.discard(1)
    with pytest.raises(InvariantError):
        st.check()


def test_bit_identical_determinism():
    from celltrack.synth import SynthConfig, generate_movie

    movie = generate_movie(SynthConfig(seed=5, frames=22, grid=(256, 256)))
    a, b = movie.masks[-2], movie.masks[-1]
    one = correspondences_to_csv([track_frame_pair(a, b)])
    two = correspondences_to_csv([track_frame_pair(LabelMask(a.labels.copy(), a.frame_index), LabelMask(b.labels.copy(), b.frame_index))])
    assert one == two


def test_translation_equivariance():
    from celltrack.synth import SynthConfig, generate_movie

    movie = generate_movie(SynthConfig(seed=2, frames=20, grid=(128, 128)))
    a, b = movie.masks[-2].labels, movie.masks[-1].labels
    pad = lambda g: np.pad(g, ((7, 0), (0, 11)))
    base = track_frame_pair(mask(a, 0), mask(b, 1))
    moved = track_frame_pair(mask(pad(a), 0), mask(pad(b), 1))
    assert base.pairs == moved.pairs and base.unmatched_daughters == moved.unmatched_daughters


def test_empty_frames_rejected():
    with pytest.raises(ValueError):
        track_frame_pair(mask(np.zeros((5, 5), dtype=int)), mask(np.ones((5, 5), dtype=int), 1))


# -------------------------------------------------------------------- CSV


def test_csv_round_trip():
    corrs = [
        Correspondence(0, [(1, 4), (2, 4), (3, 5)], {1: 0.41, 2: 0.45, 3: 0.9}, [7]),
        Correspondence(1, [(1, 1)], {1: 1.0}, []),
    ]
    text = correspondences_to_csv(corrs)
    assert text.splitlines()[0] == "frame_t,daughter_label,father_label,kind,score"
    assert "0,2,4,division,0.450000" in text and "0,7,-1,unmatched,0.000000" in text
    back = correspondences_from_csv(text)
    assert [c.frame_t for c in back] == [0, 1]
    assert back[0].pairs == corrs[0].pairs and back[0].unmatched_daughters == [7]
    assert back[0].scores == pytest.approx(corrs[0].scores)
    assert correspondences_to_csv(back) == text


@pytest.mark.parametrize("text", ["a,b\n1,2\n", "frame_t,daughter_label,father_label,kind,score\n0,x,1,proliferation,1\n"])
def test_csv_rejects_malformed(text):
    with pytest.raises(ValueError):
        correspondences_from_csv(text)
