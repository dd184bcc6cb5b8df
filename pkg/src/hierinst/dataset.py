"""Activation tracks, 1-second frame labeling and track-level train/test splitting."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .taxonomy import LabelSpace, UnknownLabelError, expand_labels

logger = logging.getLogger(__name__)

Interval = tuple[float, float]


class IngestionError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


class LabelingError(ValueError):
    pass


def merge_intervals(intervals: Iterable[Interval]) -> list[Interval]:
    """Sort and union half-open intervals; touching intervals are merged."""
    out: list[list[float]] = []
    for start, end in sorted((float(s), float(e)) for s, e in intervals):
        if end <= start:
            continue
        if out and start <= out[-1][1]:
            out[-1][1] = max(out[-1][1], end)
        else:
            out.append([start, end])
    return [(s, e) for s, e in out]


@dataclass(frozen=True)
class ActivationTrack:
    track_id: str
    duration: float
    activations: Mapping[str, tuple[Interval, ...]]
    has_bleed: bool = False

    def __post_init__(self):
        merged = {}
        for inst, ivs in self.activations.items():
            ivs = merge_intervals(ivs)
            for s, e in ivs:
                if not 0 <= s < e <= self.duration + 1e-9:
                    raise ValueError(
                        f"{self.track_id}: interval [{s}, {e}) of {inst!r} "
                        f"outside [0, {self.duration}]"
                    )
            merged[inst] = tuple(ivs)
        object.__setattr__(self, "activations", merged)

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration + 1e-9))

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "duration": self.duration,
            "has_bleed": self.has_bleed,
            "activations": {k: [list(iv) for iv in v] for k, v in sorted(self.activations.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ActivationTrack":
        return cls(
            d["track_id"],
            float(d["duration"]),
            {k: [tuple(iv) for iv in v] for k, v in d["activations"].items()},
            bool(d.get("has_bleed", False)),
        )


@dataclass(frozen=True)
class LabeledFrame:
    track_id: str
    frame_index: int
    labels: np.ndarray

    def check_consistency(self, space: LabelSpace) -> None:
        for inst in space.instruments:
            if self.labels[space.index[inst]] and not self.labels[space.index[space.instrument_group[inst]]]:
                raise LabelingError(
                    f"{self.track_id}#{self.frame_index}: {inst!r} active without its group"
                )


@dataclass(frozen=True)
class DatasetSplit:
    train_tracks: frozenset[str]
    test_tracks: frozenset[str]
    divergence: float
    test_fraction: float
    test_only_instruments: frozenset[str] = field(default_factory=frozenset)
    within_bound: bool = True

    def to_dict(self) -> dict:
        return {
            "train_tracks": sorted(self.train_tracks),
            "test_tracks": sorted(self.test_tracks),
            "divergence": self.divergence,
            "test_fraction": self.test_fraction,
            "test_only_instruments": sorted(self.test_only_instruments),
            "within_bound": self.within_bound,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetSplit":
        return cls(
            frozenset(d["train_tracks"]),
            frozenset(d["test_tracks"]),
            float(d["divergence"]),
            float(d["test_fraction"]),
            frozenset(d.get("test_only_instruments", ())),
            bool(d.get("within_bound", True)),
        )


# --------------------------------------------------------------------------- MedleyDB


def threshold_confidence(
    times: np.ndarray, confidence: np.ndarray, threshold: float, duration: float | None = None
) -> list[Interval]:
    """Turn a sampled confidence curve into active intervals.

    Sample k holds over [t_k, t_{k+1}); the last sample extends by the median
    sampling step, clipped to ``duration``.
    """
    times = np.asarray(times, dtype=float)
    confidence = np.asarray(confidence, dtype=float)
    if len(times) == 0:
        return []
    step = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    ends = np.append(times[1:], times[-1] + step)
    if duration is not None:
        ends = np.minimum(ends, duration)
    active = confidence >= threshold
    return merge_intervals(
        (s, e) for s, e, a in zip(times, ends, active) if a and e > s
    )


def _read_activation_table(path: Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError(f"{path}: empty activation file")
    header = [h.strip() for h in rows[0]]
    if header[0].lower() != "time":
        raise ParseError(f"{path}:1: first column must be 'time', got {header[0]!r}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            data.append([float(x) for x in row])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
    arr = np.asarray(data, dtype=float).reshape(-1, len(header))
    return arr[:, 0], {h: arr[:, k] for k, h in enumerate(header) if k > 0}


def _is_yes(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in {"yes", "true", "1"}


def ingest_medleydb(
    metadata_dir: str | Path,
    annotations_dir: str | Path,
    confidence_threshold: float = 0.5,
    keep_bleed: bool = False,
) -> list[ActivationTrack]:
    """Read ``*_METADATA.yaml`` files and their ``*_ACTIVATION_CONF.lab`` tables.

    Tracks flagged ``has_bleed`` are dropped unless ``keep_bleed``. Stems that
    share an instrument name are merged by interval union.
    """
    metadata_dir, annotations_dir = Path(metadata_dir), Path(annotations_dir)
    tracks = []
    for meta_path in sorted(metadata_dir.glob("*_METADATA.yaml")):
        track_id = meta_path.name[: -len("_METADATA.yaml")]
        with open(meta_path) as f:
            meta = yaml.safe_load(f) or {}
        has_bleed = _is_yes(meta.get("has_bleed", False))
        if has_bleed and not keep_bleed:
            logger.debug("skipping %s: has_bleed", track_id)
            continue
        ann_path = annotations_dir / f"{track_id}_ACTIVATION_CONF.lab"
        if not ann_path.exists():
            raise IngestionError(f"missing activation annotations for track {track_id}: {ann_path}")
        times, columns = _read_activation_table(ann_path)
        step = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
        duration = float(times[-1] + step) if len(times) else 0.0
        activations: dict[str, list[Interval]] = {}
        for stem_id, stem in (meta.get("stems") or {}).items():
            if stem_id not in columns:
                continue
            names = stem.get("instrument")
            names = names if isinstance(names, list) else [names]
            ivs = threshold_confidence(times, columns[stem_id], confidence_threshold, duration)
            for name in names:
                activations.setdefault(str(name), []).extend(ivs)
        tracks.append(ActivationTrack(track_id, duration, activations, has_bleed))
    return tracks


# --------------------------------------------------------------------------- framing


def frame_instruments(track: ActivationTrack) -> list[set[str]]:
    """Active instrument names per whole-second frame [k, k+1)."""
    frames: list[set[str]] = [set() for _ in range(track.n_frames)]
    for inst, ivs in track.activations.items():
        for start, end in ivs:
            first = int(math.floor(start))
            last = int(math.ceil(end)) - 1  # end is exclusive
            for k in range(max(first, 0), min(last, track.n_frames - 1) + 1):
                frames[k].add(inst)
    return frames


def frame_labels(track: ActivationTrack, space: LabelSpace) -> list[LabeledFrame]:
    unknown = sorted(set(track.activations) - set(space.instruments))
    if unknown:
        raise LabelingError(f"{track.track_id}: instruments not in label space: {unknown}")
    out = []
    for k, active in enumerate(frame_instruments(track)):
        frame = LabeledFrame(track.track_id, k, expand_labels(space, active))
        frame.check_consistency(space)
        out.append(frame)
    return out


def label_matrix(frames: Sequence[LabeledFrame], dim: int | None = None) -> np.ndarray:
    if not frames:
        return np.zeros((0, dim or 0), dtype=np.uint8)
    return np.stack([f.labels for f in frames]).astype(np.uint8)


def short_activation_fraction(tracks: Sequence[ActivationTrack], min_duration: float) -> float:
    """Share of (frame, active instrument) pairs active for less than ``min_duration`` in the frame."""
    if not tracks:
        raise ValueError("short_activation_fraction is undefined for an empty track list")
    if min_duration <= 0:
        raise ValueError("min_duration must be positive")
    total = short = 0
    for track in tracks:
        for ivs in track.activations.values():
            covered = np.zeros(track.n_frames)
            for start, end in ivs:
                for k in range(int(math.floor(start)), min(int(math.ceil(end)), track.n_frames)):
                    covered[k] += min(end, k + 1) - max(start, k)
            active = covered > 0
            total += int(active.sum())
            short += int((active & (covered < min_duration)).sum())
    if total == 0:
        raise ValueError("no active (frame, instrument) pairs")
    return short / total


# --------------------------------------------------------------------------- splitting


def instrument_frame_counts(
    tracks: Sequence[ActivationTrack], space: LabelSpace
) -> dict[str, np.ndarray]:
    counts = {}
    for track in tracks:
        vec = np.zeros(len(space.instruments))
        for active in frame_instruments(track):
            for inst in active:
                vec[space.index[inst]] += 1
        counts[track.track_id] = vec
    return counts


def _proportions(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    return v / s if s > 0 else v


def split_divergence(train_counts: np.ndarray, test_counts: np.ndarray) -> float:
    """L1 distance between per-instrument frame proportions of two track sets."""
    return float(np.abs(_proportions(train_counts) - _proportions(test_counts)).sum())


def split_tracks(
    tracks: Sequence[ActivationTrack],
    space: LabelSpace,
    test_fraction: float = 0.2,
    seed: int = 0,
    max_divergence: float = 0.2,
    iterations: int = 2000,
) -> DatasetSplit:
    """Seeded random search for the track partition with the closest label distributions."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if len(tracks) < 2:
        raise ValueError("need at least two tracks to split")
    ids = sorted(t.track_id for t in tracks)
    per_track = instrument_frame_counts(tracks, space)
    counts = np.stack([per_track[i] for i in ids])
    total = counts.sum(axis=0)
    n_test = min(max(round(test_fraction * len(ids)), 1), len(ids) - 1)

    rng = np.random.default_rng(seed)
    best_div, best_idx = math.inf, None
    for _ in range(iterations):
        idx = np.sort(rng.choice(len(ids), size=n_test, replace=False))
        test = counts[idx].sum(axis=0)
        div = split_divergence(total - test, test)
        if div < best_div:
            best_div, best_idx = div, idx
            if div == 0.0:
                break

    test_ids = {ids[k] for k in best_idx}
    train_ids = set(ids) - test_ids
    test_c = counts[best_idx].sum(axis=0)
    train_c = total - test_c
    test_only = {space.instruments[k] for k in np.flatnonzero((test_c > 0) & (train_c == 0))}
    within = best_div <= max_divergence
    if not within:
        logger.warning(
            "best split divergence %.4f exceeds bound %.4f after %d samples",
            best_div, max_divergence, iterations,
        )
    return DatasetSplit(
        frozenset(train_ids), frozenset(test_ids), best_div, test_fraction,
        frozenset(test_only), within,
    )


# --------------------------------------------------------------------------- file formats


def save_tracks(tracks: Sequence[ActivationTrack], path: str | Path) -> None:
    Path(path).write_text(json.dumps([t.to_dict() for t in tracks], indent=1, sort_keys=True))


def load_tracks(path: str | Path) -> list[ActivationTrack]:
    return [ActivationTrack.from_dict(d) for d in json.loads(Path(path).read_text())]


def write_frame_manifest(frames: Sequence[LabeledFrame], space: LabelSpace, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["track_id", "frame_index", *space.labels])
        for fr in frames:
            w.writerow([fr.track_id, fr.frame_index, *map(int, fr.labels)])


def read_frame_manifest(path: str | Path, space: LabelSpace | None = None) -> list[LabeledFrame]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:2] != ["track_id", "frame_index"]:
            raise ParseError(f"{path}:1: bad frame manifest header")
        if space is not None and tuple(header[2:]) != space.labels:
            raise LabelingError(f"{path}: manifest labels do not match the label space")
        frames = []
        for lineno, row in enumerate(reader, start=2):
            try:
                frames.append(
                    LabeledFrame(row[0], int(row[1]), np.array([int(x) for x in row[2:]], dtype=np.uint8))
                )
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: malformed manifest row") from None
    return frames


def frames_for_tracks(
    tracks: Sequence[ActivationTrack], space: LabelSpace
) -> list[LabeledFrame]:
    frames = []
    for t in sorted(tracks, key=lambda t: t.track_id):
        frames.extend(frame_labels(t, space))
    return frames


def check_known_instruments(tracks: Sequence[ActivationTrack], space: LabelSpace) -> None:
    unknown = sorted({i for t in tracks for i in t.activations} - set(space.instruments))
    if unknown:
        raise UnknownLabelError(f"instruments missing from taxonomy: {unknown}")
