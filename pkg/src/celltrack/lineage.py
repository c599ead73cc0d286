"""Lineage forests, division trees and per-cell tracks.

Each cell of the first frame roots one lineage tree; every later cell hangs
under its father as a node carrying that frame's shape attributes. Daughters
the tracker could not place become extra single-node trees flagged as orphans.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvariantError

log = logging.getLogger(__name__)

ATTRIBUTES = ("area", "length", "width", "dist_centroid")
TRACK_COLUMNS = ["track_id", "frame", "label", "area", "length", "width", "dist_centroid"]


@dataclass(eq=False)
class LineageNode:
    frame: int
    cell_label: int
    attributes: dict = field(default_factory=dict)
    children: list = field(default_factory=list)
    score: float = float("nan")
    orphan: bool = False

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(eq=False)
class LineageForest:
    roots: list = field(default_factory=list)
    orphans: list = field(default_factory=list)
    frame_count: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def trees(self):
        return list(self.roots) + list(self.orphans)

    def node(self, frame: int, label: int) -> LineageNode | None:
        return self._index.get((frame, label))

    def nodes(self):
        for root in self.trees():
            yield from root.iter_nodes()

    def frame_nodes(self, frame: int) -> list[LineageNode]:
        return sorted((n for (f, _), n in self._index.items() if f == frame), key=lambda n: n.cell_label)

    def _register(self, node: LineageNode) -> None:
        key = (node.frame, node.cell_label)
        if key in self._index:
            raise InvariantError(f"cell {node.cell_label} of frame {node.frame} inserted twice")
        self._index[key] = node

    def reindex(self) -> None:
        self._index = {}
        for node in self.nodes():
            self._register(node)


def cell_attributes(cells) -> dict[int, dict[str, float]]:
    """Per-cell attribute maps, with distance measured to this frame's area-weighted colony centroid."""
    from .geometry import frame_statistics

    if not cells:
        return {}
    _, _, (cr, cc) = frame_statistics(cells)
    return {
        c.id: {
            "area": float(c.area),
            "length": float(c.length),
            "width": float(c.width),
            "dist_centroid": float(math.hypot(c.centroid[0] - cr, c.centroid[1] - cc)),
        }
        for c in cells
    }


def init_forest(frame0_cells, frame: int = 0) -> LineageForest:
    if not frame0_cells:
        raise ValueError("initial frame has no cells")
    attrs = cell_attributes(frame0_cells)
    forest = LineageForest(frame_count=1)
    for c in sorted(frame0_cells, key=lambda c: c.id):
        node = LineageNode(frame, c.id, attrs[c.id])
        forest.roots.append(node)
        forest._register(node)
    return forest


def append_correspondence(forest: LineageForest, corr, f_t1_cells) -> LineageForest:
    """Hang the daughters of ``corr`` under their fathers; unplaced daughters become orphan trees."""
    t = corr.frame_t
    attrs = cell_attributes(f_t1_cells)
    labels = sorted(attrs) if f_t1_cells else sorted({d for d, _ in corr.pairs} | set(corr.unmatched_daughters))
    fathers = dict(corr.pairs)
    for d in labels:
        node = LineageNode(t + 1, d, attrs.get(d, {}), score=corr.scores.get(d, float("nan")))
        f = fathers.get(d)
        if f is None:
            node.orphan = True
            forest.orphans.append(node)
        else:
            parent = forest.node(t, f)
            if parent is None:
                raise InvariantError(f"father {f} of cell {d} is not a node of frame {t}")
            parent.children.append(node)
        forest._register(node)
    forest.frame_count = max(forest.frame_count, t + 2)
    return forest


def forest_from_correspondences(frame0_labels, correspondences, cells_by_frame=None) -> LineageForest:
    """Rebuild a forest from frame-pair correspondences.

    Without ``cells_by_frame`` the nodes carry no attributes; this is enough
    for topology-only comparisons such as track error rates.
    """
    cells_by_frame = cells_by_frame or {}
    corrs = sorted(correspondences, key=lambda c: c.frame_t)
    first = corrs[0].frame_t if corrs else 0
    if first in cells_by_frame:
        forest = init_forest(cells_by_frame[first], first)
    else:
        forest = LineageForest(frame_count=1)
        for lab in sorted(frame0_labels):
            node = LineageNode(first, int(lab))
            forest.roots.append(node)
            forest._register(node)
    for corr in corrs:
        for _, f in corr.pairs:
            if forest.node(corr.frame_t, f) is None:
                # father never seen as a daughter: it appeared without a match record
                node = LineageNode(corr.frame_t, f, orphan=corr.frame_t != first)
                (forest.orphans if node.orphan else forest.roots).append(node)
                forest._register(node)
        append_correspondence(forest, corr, cells_by_frame.get(corr.frame_t + 1, []))
    return forest


# ---------------------------------------------------------- division trees


@dataclass(eq=False)
class DivisionNode:
    birth_frame: int
    division_or_death_frame: int
    life_attribute: float
    cells: list = field(default_factory=list)
    children: list = field(default_factory=list)
    truncated: bool = False


def _chain(node: LineageNode) -> list[LineageNode]:
    chain = [node]
    while len(node.children) == 1:
        node = node.children[0]
        chain.append(node)
    return chain


def division_tree(root: LineageNode, attribute: str = "length") -> DivisionNode:
    """Collapse single-child chains of a lineage tree into one node per cell life."""
    chain = _chain(root)
    end = chain[-1]
    kids = list(end.children)
    truncated = False
    if len(kids) > 2:
        log.warning(
            "cell %d at frame %d has %d daughters (over-segmentation); keeping the two best scored",
            end.cell_label, end.frame, len(kids),
        )
        kids = sorted(kids, key=lambda n: (-_nan_low(n.score), n.cell_label))[:2]
        truncated = True
    values = [n.attributes[attribute] for n in chain if attribute in n.attributes]
    life = float(np.mean(values)) if values else float("nan")
    return DivisionNode(
        birth_frame=root.frame,
        division_or_death_frame=end.frame,
        life_attribute=life,
        cells=[(n.frame, n.cell_label) for n in chain],
        children=[division_tree(k, attribute) for k in sorted(kids, key=lambda n: n.cell_label)],
        truncated=truncated,
    )


def _nan_low(x: float) -> float:
    return -math.inf if math.isnan(x) else x


def division_leaves(dn: DivisionNode) -> list[DivisionNode]:
    if not dn.children:
        return [dn]
    return [leaf for c in dn.children for leaf in division_leaves(c)]


# ------------------------------------------------------------------ tracks


@dataclass(eq=False)
class Track:
    cells: list  # [(frame, label), ...]
    series: dict = field(default_factory=dict)
    track_id: int = 0

    @property
    def start(self) -> int:
        return self.cells[0][0]

    @property
    def end(self) -> int:
        return self.cells[-1][0]

    def __len__(self):
        return len(self.cells)


def extract_tracks(forest: LineageForest) -> list[Track]:
    """One track per cell life (birth to division or disappearance), in depth-first order."""
    tracks = []
    stack = list(reversed(forest.trees()))
    while stack:
        start = stack.pop()
        chain = _chain(start)
        series = {a: [n.attributes.get(a, float("nan")) for n in chain] for a in ATTRIBUTES}
        tracks.append(Track([(n.frame, n.cell_label) for n in chain], series, len(tracks)))
        stack.extend(sorted(chain[-1].children, key=lambda n: n.cell_label, reverse=True))
    return tracks


def track_motion(tracks):
    """Per-track maximum distance from the colony centroid and mean speed of that distance.

    Speed is the mean absolute frame-to-frame change of the distance series;
    single-frame tracks are skipped.
    """
    max_d, speed = [], []
    for tr in tracks:
        d = np.asarray(tr.series.get("dist_centroid", []), dtype=float)
        if len(d) < 2 or not np.all(np.isfinite(d)):
            continue
        max_d.append(d.max())
        speed.append(np.abs(np.diff(d)).mean())
    return np.array(max_d), np.array(speed)


def distance_velocity_correlation(tracks) -> float:
    max_d, speed = track_motion(tracks)
    if len(max_d) < 3:
        return float("nan")
    return float(stats.spearmanr(max_d, speed).statistic)


def tracks_to_csv(tracks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACK_COLUMNS)
    for tr in tracks:
        for i, (frame, label) in enumerate(tr.cells):
            w.writerow([tr.track_id, frame, label] + [repr(float(tr.series[a][i])) for a in ATTRIBUTES])
    return buf.getvalue()


def tracks_from_csv(text: str) -> list[Track]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TRACK_COLUMNS:
        raise ValueError(f"expected columns {TRACK_COLUMNS}, got {reader.fieldnames}")
    by_id: dict[int, Track] = {}
    for row in reader:
        tid = int(row["track_id"])
        tr = by_id.setdefault(tid, Track([], {a: [] for a in ATTRIBUTES}, tid))
        tr.cells.append((int(row["frame"]), int(row["label"])))
        for a in ATTRIBUTES:
            tr.series[a].append(float(row[a]))
    return [by_id[k] for k in sorted(by_id)]


# ---------------------------------------------------------------- exports


def _node_to_dict(node: LineageNode) -> dict:
    return {
        "frame": node.frame,
        "label": node.cell_label,
        "attributes": dict(sorted(node.attributes.items())),
        "score": None if math.isnan(node.score) else node.score,
        "orphan": node.orphan,
        "children": [_node_to_dict(c) for c in node.children],
    }


def _node_from_dict(d: dict) -> LineageNode:
    return LineageNode(
        frame=int(d["frame"]),
        cell_label=int(d["label"]),
        attributes={k: float(v) for k, v in d.get("attributes", {}).items()},
        children=[_node_from_dict(c) for c in d.get("children", [])],
        score=float("nan") if d.get("score") is None else float(d["score"]),
        orphan=bool(d.get("orphan", False)),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def _newick(node: LineageNode) -> str:
    tags = [f"{k}={_fmt(v)}" for k, v in sorted(node.attributes.items())]
    if not math.isnan(node.score):
        tags.append(f"score={_fmt(node.score)}")
    if node.orphan:
        tags.append("orphan=1")
    name = f"F{node.frame}L{node.cell_label}"
    ann = "[&&NHX:" + ":".join(tags) + "]" if tags else ""
    if node.children:
        return "(" + ",".join(_newick(c) for c in node.children) + ")" + name + ann
    return name + ann


_TOKEN = re.compile(r"\(|\)|,|;|F(\d+)L(\d+)(?:\[&&NHX:([^\]]*)\])?")


def _parse_newick(line: str) -> LineageNode:
    stack: list[list] = [[]]  # child lists under construction
    pos = 0
    last = None
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if not m:
            raise ValueError(f"newick parse error at offset {pos}: {line[pos:pos + 20]!r}")
        tok = m.group(0)
        pos = m.end()
        if tok == "(":
            stack.append([])
        elif tok == ",":
            continue
        elif tok == ")":
            m2 = _TOKEN.match(line, pos)
            if not m2 or m2.group(1) is None:
                raise ValueError(f"newick parse error: internal node without name at offset {pos}")
            pos = m2.end()
            node = _named_node(m2)
            node.children = stack.pop()
            stack[-1].append(node)
            last = node
        elif tok == ";":
            break
        else:
            last = _named_node(m)
            stack[-1].append(last)
    if len(stack) != 1 or len(stack[0]) != 1:
        raise ValueError("newick parse error: unbalanced tree")
    return stack[0][0]


def _named_node(m) -> LineageNode:
    node = LineageNode(int(m.group(1)), int(m.group(2)))
    if m.group(3):
        for item in m.group(3).split(":"):
            key, _, val = item.partition("=")
            if key == "score":
                node.score = float(val)
            elif key == "orphan":
                node.orphan = val == "1"
            else:
                node.attributes[key] = float(val)
    return node


def export_forest(forest: LineageForest, fmt: str = "json-tree") -> bytes:
    if fmt == "json-tree":
        doc = {
            "frame_count": forest.frame_count,
            "roots": [_node_to_dict(r) for r in forest.roots],
            "orphans": [_node_to_dict(o) for o in forest.orphans],
        }
        return (json.dumps(doc, separators=(",", ":")) + "\n").encode()
    if fmt == "newick-attr":
        lines = [f"#frame_count={forest.frame_count}"]
        lines += [_newick(t) + ";" for t in forest.trees()]
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown forest format {fmt!r}")


def import_forest(data: bytes, fmt: str | None = None) -> LineageForest:
    text = data.decode() if isinstance(data, (bytes, bytearray)) else data
    if fmt is None:
        fmt = "json-tree" if text.lstrip().startswith("{") else "newick-attr"
    forest = LineageForest()
    if fmt == "json-tree":
        doc = json.loads(text)
        forest.frame_count = int(doc["frame_count"])
        forest.roots = [_node_from_dict(d) for d in doc["roots"]]
        forest.orphans = [_node_from_dict(d) for d in doc.get("orphans", [])]
    elif fmt == "newick-attr":
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#frame_count="):
                forest.frame_count = int(line.split("=", 1)[1])
                continue
            tree = _parse_newick(line)
            (forest.orphans if tree.orphan else forest.roots).append(tree)
    else:
        raise ValueError(f"unknown forest format {fmt!r}")
    forest.reindex()
    return forest
