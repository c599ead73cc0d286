"""Command-line front end.

    celltrack track MANIFEST --out DIR [--config FILE] [--format json-tree|newick-attr]
    celltrack evaluate PREDICTED TRUTH [--out DIR] [--window A:B]
    celltrack synth --out DIR [--config FILE] [--seed N] [--format text|binary]
    celltrack export-tree FOREST --out DIR [--format json-tree|newick-attr]
    celltrack export-tracks FOREST --out DIR [--window A:B]

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, parse_window
from .errors import ConfigError, InvariantError
from .evaluation import GroundTruth, evaluate, histogram_to_csv, percent
from .geometry import load_movie, save_label_mask, write_manifest
from .lineage import Track, export_forest, extract_tracks, import_forest, tracks_to_csv
from .matching import correspondences_from_csv, correspondences_to_csv
from .synth import generate_movie
from .tracker import track_movie

log = logging.getLogger("celltrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
FOREST_FILES = {"json-tree": "forest.json", "newick-attr": "forest.nwk"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="celltrack", description="Track cells across frames of a segmented time-lapse movie.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("track", help="track every consecutive frame pair of a movie")
    t.add_argument("manifest", help="text file listing one mask path per line")
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--format", choices=sorted(FOREST_FILES), help="lineage forest format")

    e = sub.add_parser("evaluate", help="score predicted correspondences against ground truth")
    e.add_argument("predicted", help="correspondence CSV, or a directory of them")
    e.add_argument("truth", help="ground-truth correspondence CSV, or a directory of them")
    e.add_argument("--out")
    e.add_argument("--config")
    e.add_argument("--window", help="inclusive frame window A:B for the track error rate")

    s = sub.add_parser("synth", help="simulate a colony movie with exact ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=["text", "binary"], help="mask file format")

    x = sub.add_parser("export-tree", help="convert a lineage forest between formats")
    x.add_argument("forest")
    x.add_argument("--out", required=True)
    x.add_argument("--format", choices=sorted(FOREST_FILES), default="newick-attr")

    k = sub.add_parser("export-tracks", help="write per-cell tracks of a lineage forest as CSV")
    k.add_argument("forest")
    k.add_argument("--out", required=True)
    k.add_argument("--window", help="keep only frames A..B (inclusive)")
    return p


# ------------------------------------------------------------------ helpers


def _write(out: Path, name: str, data) -> Path:
    path = out / name
    if isinstance(data, str):
        data = data.encode()
    path.write_bytes(data)
    return path


def _read_correspondences(path: Path):
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise FileNotFoundError(f"no CSV files in {path}")
        corrs = []
        for f in files:
            corrs.extend(correspondences_from_csv(f.read_text()))
        return corrs
    return correspondences_from_csv(path.read_text())


def window_tracks(tracks, window) -> list[Track]:
    """Tracks truncated to the inclusive frame ``window``; tracks outside it are dropped."""
    if window is None:
        return list(tracks)
    a, b = window
    out = []
    for tr in tracks:
        keep = [i for i, (f, _) in enumerate(tr.cells) if a <= f <= b]
        if keep:
            series = {k: [v[i] for i in keep] for k, v in tr.series.items()}
            out.append(Track([tr.cells[i] for i in keep], series, tr.track_id))
    return out


def summary_text(cfg: RunConfig, manifest, result) -> str:
    lines = [f"manifest = {manifest}", f"frames = {len(result.cell_counts)}", ""]
    lines.append("frame_t cells_t1 matched unmatched divisions thresholds")
    total_unmatched = 0
    for corr, n in zip(result.correspondences, result.cell_counts[1:]):
        kinds = corr.kinds
        divisions = sum(1 for k in kinds.values() if k == "division")
        total_unmatched += len(corr.unmatched_daughters)
        ts = ",".join(f"{t:.2f}" for t in corr.thresholds_used) or "-"
        lines.append(f"{corr.frame_t} {n} {len(corr.pairs)} {len(corr.unmatched_daughters)} {divisions} {ts}")
    lines += ["", f"total_unmatched = {total_unmatched}", "", "# effective configuration", cfg.to_text()]
    return "\n".join(lines)


# ----------------------------------------------------------------- commands


def cmd_track(args) -> int:
    cfg = load_config(args.config, {"output.forest_format": args.format})
    masks = load_movie(args.manifest)
    if len(masks) < 2:
        raise UsageError("the manifest must list at least two frames")
    result = track_movie(masks, cfg.match)
    out = Path(args.out)
    pairs = out / "pairs"
    pairs.mkdir(parents=True, exist_ok=True)
    for corr in result.correspondences:
        _write(pairs, f"pair_{corr.frame_t:05d}.csv", correspondences_to_csv([corr]))
    fmt = cfg.output.forest_format
    _write(out, FOREST_FILES[fmt], export_forest(result.forest, fmt))
    _write(out, "tracks.csv", tracks_to_csv(extract_tracks(result.forest)))
    _write(out, "summary.txt", summary_text(cfg, args.manifest, result))
    unmatched = sum(len(c.unmatched_daughters) for c in result.correspondences)
    print(f"tracked {len(masks)} frames, {unmatched} unmatched daughters; outputs in {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, {"output.window": args.window})
    pred = _read_correspondences(Path(args.predicted))
    truth = GroundTruth.from_correspondences(_read_correspondences(Path(args.truth)), frame_window=cfg.output.window)
    report = evaluate(pred, truth, cfg.output.window)
    text = report.to_text() + f"ACC = {percent(report.ACC)}\nER = {percent(report.ER)}\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out, "report.txt", text)
        _write(out, "histogram.csv", histogram_to_csv(report.histogram))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_config(args.config, {"synth.seed": args.seed, "output.mask_format": args.format})
    movie = generate_movie(cfg.synth)
    out = Path(args.out)
    masks_dir = out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    ext = "txt" if cfg.output.mask_format == "text" else "ctrk"
    paths = []
    for mask in movie.masks:
        path = masks_dir / f"frame_{mask.frame_index:05d}.{ext}"
        save_label_mask(mask, path, cfg.output.mask_format)
        paths.append(path)
    write_manifest(paths, out / "manifest.txt")
    _write(out, "truth.csv", correspondences_to_csv(movie.correspondences))
    _write(out, FOREST_FILES[cfg.output.forest_format], export_forest(movie.forest, cfg.output.forest_format))
    _write(out, "config.txt", cfg.to_text())
    print(f"wrote {len(movie.masks)} frames ({len(movie.masks[-1].cell_ids())} cells at the end) to {out}")
    return EXIT_OK


def cmd_export_tree(args) -> int:
    forest = import_forest(Path(args.forest).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write(out, FOREST_FILES[args.format], export_forest(forest, args.format))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_tracks(args) -> int:
    window = parse_window(args.window) if args.window else None
    forest = import_forest(Path(args.forest).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write(out, "tracks.csv", tracks_to_csv(window_tracks(extract_tracks(forest), window)))
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "export-tree": cmd_export_tree,
    "export-tracks": cmd_export_tracks,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"celltrack: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"celltrack: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, ValueError, KeyError) as exc:
        print(f"celltrack: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
