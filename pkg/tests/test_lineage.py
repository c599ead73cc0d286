import math

import numpy as np
import pytest

from celltrack.errors import InvariantError
from celltrack.geometry import LabelMask, extract_cells
from celltrack.lineage import (
    LineageForest,
    LineageNode,
    append_correspondence,
    distance_velocity_correlation,
    division_leaves,
    division_tree,
    export_forest,
    extract_tracks,
    forest_from_correspondences,
    import_forest,
    init_forest,
    track_motion,
    tracks_from_csv,
    tracks_to_csv,
)
from celltrack.matching import Correspondence


def division_forest():
    """Cell 1 lives frames 0-1, divides into 2 and 3 at frame 2; 3 persists as 4 in frame 3."""
    corrs = [
        Correspondence(0, [(1, 1)], {1: 0.9}),
        Correspondence(1, [(2, 1), (3, 1)], {2: 0.4, 3: 0.45}),
        Correspondence(2, [(5, 2), (4, 3)], {4: 0.8, 5: 0.85}, [6]),
    ]
    return forest_from_correspondences([1], corrs)


def random_forest(rng, n_roots=3, frames=6):
    forest = LineageForest(frame_count=frames)
    label = iter(range(1, 10_000))

    def grow(frame, orphan=False):
        node = LineageNode(frame, next(label), orphan=orphan)
        node.attributes = {a: float(rng.normal() * 10.0 ** int(rng.integers(-3, 4))) for a in ("area", "length", "width", "dist_centroid")}
        node.score = float("nan") if rng.random() < 0.2 else float(rng.random())
        if frame + 1 < frames:
            node.children = [grow(frame + 1) for _ in range(int(rng.choice([0, 1, 1, 1, 2, 2, 3])))]
        return node

    forest.roots = [grow(0) for _ in range(n_roots)]
    forest.orphans = [grow(int(rng.integers(1, frames)), orphan=True) for _ in range(int(rng.integers(0, 3)))]
    forest.reindex()
    return forest


def test_newick_of_a_division():
    f = LineageForest(frame_count=2)
    f.roots = [LineageNode(0, 1, children=[LineageNode(1, 2, score=0.4), LineageNode(1, 3, score=0.45)])]
    f.reindex()
    assert export_forest(f, "newick-attr") == b"#frame_count=2\n(F1L2[&&NHX:score=0.4],F1L3[&&NHX:score=0.45])F0L1;\n"


def test_newick_attributes_and_orphans():
    node = LineageNode(3, 7, {"length": 12.5, "area": 40.0}, orphan=True)
    f = LineageForest(orphans=[node], frame_count=4)
    text = export_forest(f, "newick-attr").decode()
    assert "F3L7[&&NHX:area=40.0:length=12.5:orphan=1];" in text
    back = import_forest(text.encode())
    assert back.orphans[0].attributes == {"area": 40.0, "length": 12.5} and not back.roots


@pytest.mark.parametrize("fmt", ["json-tree", "newick-attr"])
def test_round_trip_random_forests(rng, fmt):
    for _ in range(40):
        forest = random_forest(rng)
        data = export_forest(forest, fmt)
        back = import_forest(data)
        assert export_forest(back, fmt) == data
        assert export_forest(back, "json-tree") == export_forest(forest, "json-tree")
        assert sorted(back._index) == sorted(forest._index)


def test_cross_format_round_trip(rng):
    forest = random_forest(rng, n_roots=5)
    via = import_forest(export_forest(import_forest(export_forest(forest, "newick-attr")), "json-tree"))
    assert export_forest(via, "newick-attr") == export_forest(forest, "newick-attr")


@pytest.mark.parametrize("bad", [b"(F1L2,F1L3;\n", b"(F1L2)x;\n", b"F1L2 junk;\n"])
def test_newick_parse_errors(bad):
    with pytest.raises(ValueError):
        import_forest(bad, "newick-attr")


def test_unknown_format():
    with pytest.raises(ValueError):
        export_forest(LineageForest(), "xml")


def test_forest_topology():
    f = division_forest()
    assert [r.cell_label for r in f.roots] == [1]
    assert [(o.frame, o.cell_label) for o in f.orphans] == [(3, 6)]
    assert f.frame_count == 4
    assert [n.cell_label for n in f.frame_nodes(2)] == [2, 3]
    assert f.node(2, 2).score == 0.4
    assert [c.cell_label for c in f.node(2, 3).children] == [4]


def test_division_tree_collapses_chains():
    dt = division_tree(division_forest().roots[0])
    assert (dt.birth_frame, dt.division_or_death_frame) == (0, 1)
    assert dt.cells == [(0, 1), (1, 1)]
    assert [(c.birth_frame, c.division_or_death_frame) for c in dt.children] == [(2, 3), (2, 3)]
    assert [c.cells for c in dt.children] == [[(2, 2), (3, 5)], [(2, 3), (3, 4)]]
    assert len(division_leaves(dt)) == 2


def test_division_tree_keeps_two_best_of_oversegmentation():
    root = LineageNode(0, 1, children=[LineageNode(1, 2, score=0.3), LineageNode(1, 3, score=0.2), LineageNode(1, 4, score=0.35)])
    dt = division_tree(root)
    assert dt.truncated
    assert [c.cells[0][1] for c in dt.children] == [2, 4]


def test_leaves_count_matches_last_frame():
    from celltrack.synth import SynthConfig, generate_movie

    movie = generate_movie(SynthConfig(seed=1, frames=16, grid=(128, 128)))
    last = len(movie.masks) - 1
    leaves = [leaf for r in movie.forest.roots for leaf in division_leaves(division_tree(r))]
    alive = [leaf for leaf in leaves if leaf.division_or_death_frame == last]
    assert len(alive) == len(movie.masks[-1].cell_ids())


def test_tracks_one_per_life():
    tracks = extract_tracks(division_forest())
    assert [t.cells for t in tracks] == [[(0, 1), (1, 1)], [(2, 2), (3, 5)], [(2, 3), (3, 4)], [(3, 6)]]
    assert [t.track_id for t in tracks] == [0, 1, 2, 3]
    assert (tracks[1].start, tracks[1].end, len(tracks[1])) == (2, 3, 2)


def test_tracks_csv_round_trip():
    grid0 = np.zeros((20, 20), dtype=int)
    grid0[2:5, 2:12] = 1
    grid0[10:13, 2:8] = 2
    cells0 = extract_cells(LabelMask(grid0))
    forest = init_forest(cells0)
    append_correspondence(forest, Correspondence(0, [(1, 1), (2, 2)], {1: 1.0, 2: 1.0}), cells0)
    tracks = extract_tracks(forest)
    assert tracks[0].series["area"] == [30.0, 30.0]
    text = tracks_to_csv(tracks)
    back = tracks_from_csv(text)
    assert tracks_to_csv(back) == text
    assert [t.cells for t in back] == [t.cells for t in tracks]


def test_append_rejects_unknown_father_and_duplicates():
    forest = forest_from_correspondences([1], [])
    with pytest.raises(InvariantError):
        append_correspondence(forest, Correspondence(0, [(1, 99)]), [])
    forest = forest_from_correspondences([1], [Correspondence(0, [(1, 1)])])
    with pytest.raises(InvariantError):
        append_correspondence(forest, Correspondence(0, [(1, 1)]), [])


def test_track_motion_and_spearman():
    from celltrack.lineage import Track

    tracks = [Track([(i, 1)] * 3, {"dist_centroid": [d, d + s, d + 2 * s]}) for i, (d, s) in enumerate([(1, 0.1), (5, 0.5), (9, 0.7), (12, 1.5)])]
    tracks.append(Track([(0, 9)], {"dist_centroid": [3.0]}))  # single frame: skipped
    max_d, speed = track_motion(tracks)
    assert max_d.tolist() == pytest.approx([1.2, 6.0, 10.4, 15.0])
    assert speed.tolist() == pytest.approx([0.1, 0.5, 0.7, 1.5])
    assert distance_velocity_correlation(tracks) == pytest.approx(1.0)
    assert math.isnan(distance_velocity_correlation(tracks[:2]))
