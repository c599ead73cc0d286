"""Simulate a small colony, track it and compare against the generator's truth.

    python3 demos/track_a_colony.py [seed]
"""
import sys

from celltrack.evaluation import evaluate, percent
from celltrack.lineage import division_leaves, division_tree, export_forest, extract_tracks
from celltrack.synth import SynthConfig, generate_movie
from celltrack.tracker import track_movie

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

# one rod grows and divides for 30 frames; labels are reshuffled every frame,
# so the tracker has to recover identity from shape and position alone
movie = generate_movie(SynthConfig(seed=seed, frames=30, grid=(256, 256), jitter=0.5))
print(f"cells per frame: {[len(m.cell_ids()) for m in movie.masks]}")
print(f"divisions: {len(movie.divisions)}")

result = track_movie(movie.masks)
report = evaluate(result.correspondences, movie.truth, window=(20, 29))
print(f"frame pairs without a single error: {report.TDR:.3f}")
print(f"pair accuracy {percent(report.ACC)}, track error rate over frames 20-29 {percent(report.ER)}")

# the lineage forest collapses into one node per cell life
tree = division_tree(result.forest.roots[0])
print(f"first cell lived frames {tree.birth_frame}-{tree.division_or_death_frame}, "
      f"{len(division_leaves(tree))} descendants alive at the end")

tracks = extract_tracks(result.forest)
longest = max(tracks, key=len)
print(f"{len(tracks)} tracks; the longest spans frames {longest.start}-{longest.end}")

newick = export_forest(result.forest, "newick-attr").decode().splitlines()[1]
print(f"the whole lineage is one Newick line of {len(newick)} characters, ending {newick[-60:]}")
