"""Corpus statistics for a local MedleyDB copy.

Reports retained vs. total tracks after the bleed filter, frame counts, the
share of (frame, instrument) activations shorter than 0.1 s, and per-label
frame supports at the chosen taxonomy depth.

    python scripts/medleydb_stats.py /data/MedleyDB
"""

import argparse
import os
from pathlib import Path

import numpy as np

from hierinst import dataset, taxonomy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", nargs="?", default=os.environ.get("HIERINST_CORPUS"))
    ap.add_argument("--threshold", type=float, default=0.5)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--min-duration", type=float, default=0.1)
    args = ap.parse_args()
    if not args.root:
        raise SystemExit("pass the MedleyDB root or set HIERINST_CORPUS")
    root = Path(args.root)
    meta = root / "Metadata"
    ann = root / "Annotations" / "Instrument_Activations" / "ACTIVATION_CONF"

    total = len(list(meta.glob("*_METADATA.yaml")))
    tracks = dataset.ingest_medleydb(meta, ann, args.threshold)
    space = taxonomy.build_label_space(taxonomy.truncate(taxonomy.default_taxonomy(), args.depth), args.depth)
    frames = dataset.frames_for_tracks(tracks, space)
    y = dataset.label_matrix(frames, space.dim)

    print(f"tracks kept: {len(tracks)} of {total}")
    print(f"frames: {len(frames)}")
    frac = dataset.short_activation_fraction(tracks, args.min_duration)
    print(f"activations shorter than {args.min_duration} s: {100 * frac:.3f}%")
    print(f"labels: {len(space.instruments)} instruments, {len(space.groups)} groups")
    support = y.sum(axis=0)
    for k in np.argsort(-support, kind="stable"):
        print(f"{support[k]:>8d}  {space.display_name(space.labels[k])}")


if __name__ == "__main__":
    main()
