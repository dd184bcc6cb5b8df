"""MFCC front-end and the on-disk feature store.

One second of audio at 22050 Hz gives 22 centered STFT windows (n_fft 2048,
hop 1024), a 128-band mel filter bank, log power, and an orthonormal DCT-II
truncated to 80 coefficients: a (1, 80, 22) block per frame.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

logger = logging.getLogger(__name__)

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 1024
N_MELS = 128
N_MFCC = 80
LOG_FLOOR = 1e-10
FEATURE_SHAPE = (1, N_MFCC, 1 + SAMPLE_RATE // HOP)


class FeatureShapeError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureTensor:
    data: np.ndarray
    frame_ref: tuple[str, int] = ("", 0)

    def __post_init__(self):
        if self.data.shape != FEATURE_SHAPE:
            raise FeatureShapeError(f"feature shape {self.data.shape} != {FEATURE_SHAPE}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature tensor contains non-finite values")


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=float)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(
        f >= min_log_hz,
        min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep,
        f / f_sp,
    )


def mel_to_hz(m):
    m = np.asarray(m, dtype=float)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular, area-normalized filters of shape (n_mels, n_fft // 2 + 1)."""
    fft_freqs = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_pts[2 : n_mels + 2] - mel_pts[:n_mels]))[:, None]
    weights.flags.writeable = False
    return weights


def _frames(audio: np.ndarray) -> np.ndarray:
    pad = N_FFT // 2
    padded = np.pad(audio, pad, mode="reflect")
    view = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP]
    return view


def extract_mfcc(audio: np.ndarray, sample_rate: int = SAMPLE_RATE, frame_ref=("", 0)) -> FeatureTensor:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.shape[0] != sample_rate:
        raise FeatureShapeError(
            f"expected exactly one second ({sample_rate} samples), got shape {audio.shape}"
        )
    if sample_rate != SAMPLE_RATE:
        raise FeatureShapeError(f"sample rate {sample_rate} unsupported, expected {SAMPLE_RATE}")
    if not np.all(np.isfinite(audio)):
        raise ValueError("audio contains non-finite samples")
    window = get_window("hann", N_FFT, fftbins=True)
    spec = np.abs(rfft(_frames(audio) * window, axis=1)) ** 2  # (time, freq)
    mel = spec @ mel_filterbank(sample_rate, N_FFT, N_MELS).T  # (time, mels)
    log_mel = 10.0 * np.log10(mel + LOG_FLOOR)
    mfcc = dct(log_mel, type=2, axis=1, norm="ortho")[:, :N_MFCC]
    return FeatureTensor(mfcc.T[None].astype(np.float32), frame_ref)


# --------------------------------------------------------------------------- feature store
#
# Layout of a store directory:
#   index.csv            track_id,frame_index,file,offset  (offset in frames)
#   <track_id>.f32       concatenated little-endian float32 blocks of 1*80*22 values


BLOCK = int(np.prod(FEATURE_SHAPE))
_SAFE = str.maketrans({c: "_" for c in "/\\:*?\"<>| "})


def _track_file(track_id: str) -> str:
    return track_id.translate(_SAFE) + ".f32"


def batch_extract(
    manifest: Sequence[tuple[str, int]],
    audio_for: Callable[[str], np.ndarray] | Mapping[str, np.ndarray],
    store_dir: str | Path,
    sample_rate: int = SAMPLE_RATE,
) -> dict[str, str]:
    """Compute features for every (track_id, frame_index) row and write the store.

    Returns a map of track_id -> error message for tracks whose audio could not
    be loaded; those rows are skipped.
    """
    store_dir = Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)
    get = audio_for.__getitem__ if isinstance(audio_for, Mapping) else audio_for
    by_track: dict[str, list[int]] = {}
    for track_id, k in manifest:
        by_track.setdefault(track_id, []).append(int(k))

    errors: dict[str, str] = {}
    index_rows = []
    for track_id in sorted(by_track):
        try:
            audio = np.asarray(get(track_id), dtype=np.float64)
        except (KeyError, FileNotFoundError, OSError, ValueError) as exc:
            errors[track_id] = f"{type(exc).__name__}: {exc}"
            logger.error("features: cannot load audio for %s: %s", track_id, exc)
            continue
        fname = _track_file(track_id)
        blocks = []
        for offset, k in enumerate(sorted(by_track[track_id])):
            seg = audio[k * sample_rate : (k + 1) * sample_rate]
            if seg.shape[0] < sample_rate:
                seg = np.pad(seg, (0, sample_rate - seg.shape[0]))
            blocks.append(extract_mfcc(seg, sample_rate, (track_id, k)).data)
            index_rows.append((track_id, k, fname, offset))
        np.stack(blocks).astype("<f4").tofile(store_dir / fname)
    with open(store_dir / "index.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["track_id", "frame_index", "file", "offset"])
        w.writerows(index_rows)
    return errors


class FeatureStore:
    """Read side of a feature store directory."""

    def __init__(self, store_dir: str | Path):
        self.root = Path(store_dir)
        self._index: dict[tuple[str, int], tuple[str, int]] = {}
        with open(self.root / "index.csv", newline="") as f:
            reader = csv.DictReader(f)
            for row in reader:
                self._index[(row["track_id"], int(row["frame_index"]))] = (row["file"], int(row["offset"]))
        self._arrays: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, ref) -> bool:
        return tuple(ref) in self._index

    def keys(self):
        return list(self._index)

    def _array(self, fname: str) -> np.ndarray:
        if fname not in self._arrays:
            self._arrays[fname] = np.fromfile(self.root / fname, dtype="<f4").reshape(-1, *FEATURE_SHAPE)
        return self._arrays[fname]

    def get(self, track_id: str, frame_index: int) -> np.ndarray:
        fname, offset = self._index[(track_id, int(frame_index))]
        return self._array(fname)[offset]

    def stack(self, refs: Sequence[tuple[str, int]]) -> np.ndarray:
        if not refs:
            return np.zeros((0, *FEATURE_SHAPE), dtype=np.float32)
        return np.stack([self.get(t, k) for t, k in refs]).astype(np.float32)


def extract_frames(audio: np.ndarray, n_frames: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """In-memory (n_frames, 1, 80, 22) features for consecutive 1 s frames of a track."""
    out = np.empty((n_frames, *FEATURE_SHAPE), dtype=np.float32)
    for k in range(n_frames):
        seg = np.asarray(audio[k * sample_rate : (k + 1) * sample_rate], dtype=np.float64)
        if seg.shape[0] < sample_rate:
            seg = np.pad(seg, (0, sample_rate - seg.shape[0]))
        out[k] = extract_mfcc(seg, sample_rate).data
    return out
