"""Follow one neighborhood through the matcher on a tiny colony.

A brick wall of rectangular cells moves by (2, -1) between frames and gets new
labels. We grow a neighborhood around one cell, build its search region,
score the best placement and check the father totals against T.

    python3 demos/inside_one_match.py
"""
import numpy as np

from celltrack.geometry import LabelMask, extract_cells, frame_statistics
from celltrack.matching import MatchConfig, best_placement, daughter_counts, father_totals, validate
from celltrack.neighborhood import build_neighborhood, candidate_pool, colony_radius, layer_bound
from celltrack.search_region import knn_region, region_parameters, select_candidates

rng = np.random.default_rng(1)
before = np.zeros((48, 80), dtype=np.int64)
label = 0
for i in range(4):
    for j in range(4):
        label += 1
        r0, c0 = 6 + i * 7, 6 + j * 15 + (7 if i % 2 else 0)
        before[r0:r0 + 6, c0:c0 + 14] = label
after = np.zeros_like(before)
after[2:, :-1] = before[:-2, 1:]
perm = np.concatenate([[0], rng.permutation(16) + 1])
after = perm[after]

cells = extract_cells(LabelMask(after, 1))
avg_len, avg_w, cen = frame_statistics(cells)
anchor = cells[5]
L = layer_bound(anchor, cen, colony_radius(cells, cen), 3)
pool = candidate_pool(anchor, cells, {c.id for c in cells}, avg_len)
nb = build_neighborhood(anchor, pool, avg_w, L)
print(f"anchor {anchor.id}: {L} layer(s), members {nb.member_ids}, {nb.pixel_count} px")

k, l = region_parameters(nb.pixel_count, 0.5, 0.03)
region = knn_region((after.shape[1], after.shape[0]), nb.centroid, nb.covariance, k)
cands = select_candidates(region, l)
print(f"search region {k} px, {len(cands)} candidate placements, first = own centroid {tuple(int(v) for v in cands.points[0])}")

S, S_hat, fathers = best_placement(nb, cands, LabelMask(before, 0), refine_steps=8, region=region)
print(f"best offset {S.offset} (the true motion is (2, -1) backwards: (-2, 1))")
for d, (f, s) in sorted(S_hat.assignments().items()):
    print(f"  daughter {d:2d} -> father {f:2d}  Jaccard {s:.2f}")
totals = father_totals(S_hat)
print(f"accepted at T = 0.7: {validate(totals, 0.7, MatchConfig(), daughter_counts(S_hat))}")
