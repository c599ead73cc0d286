"""One rod splits into two halves that then drift. When is the split still found?

Prints the frames as ASCII and the matcher's verdict for a few drifts.

    python3 demos/split_fixture.py
"""
import math

import numpy as np

from celltrack.geometry import LabelMask
from celltrack.matching import track_frame_pair
from celltrack.synth import RodCell, rasterize_rod


def paint(rods, shape=(40, 60)):
    g = np.zeros(shape, dtype=np.int64)
    for lab, rod in rods:
        p = rasterize_rod(rod, (shape[1], shape[0]))
        g[p[:, 0], p[:, 1]] = lab
    return g


def show(grid):
    chars = {0: ".", 5: "F", 3: "a", 9: "b"}
    print("\n".join("".join(chars[v] for v in row) for row in grid[10:30]))


L, W = 30.0, 7.0
father = paint([(5, RodCell(0, (30.0, 20.0), 0.0, L, W))])
print("frame t")
show(father)
for s1, s2, note in [((0, 0), (0, 0), "clean split"), ((2, 3), (2, 3), "both halves drift together"),
                     ((-3, 0), (3, 0), "halves pushed apart along the axis"), ((0, -4), (0, 4), "halves sheared sideways")]:
    d1 = RodCell(1, (30.0 - L / 4 + s1[0], 20.0 + s1[1]), 0.0, L / 2, W)
    d2 = RodCell(2, (30.0 + L / 4 + s2[0], 20.0 + s2[1]), 0.0, L / 2, W)
    kids = paint([(3, d1), (9, d2)])
    corr = track_frame_pair(LabelMask(father, 0), LabelMask(kids, 1))
    print(f"\nframe t+1, {note}: pairs {sorted(corr.pairs)}, kinds {corr.kinds}, unmatched {corr.unmatched_daughters}")
    show(kids)
