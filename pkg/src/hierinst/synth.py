"""Desk-scale synthetic corpus: sinusoid-mixture "instruments" with exact activations."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .dataset import ActivationTrack
from .taxonomy import Taxonomy


class ConfigError(ValueError):
    pass


@dataclass
class InstrumentSignature:
    frequencies: list[float]
    noise: float = 0.01
    amplitude: float = 0.3


@dataclass
class SyntheticCorpusSpec:
    instruments: dict[str, InstrumentSignature]
    n_tracks: int = 40
    duration: float = 60.0
    # probability of k simultaneously active instruments in a segment
    polyphony: dict[int, float] = field(default_factory=lambda: {1: 0.5, 2: 0.35, 3: 0.15})
    segment_range: tuple[int, int] = (2, 6)
    sample_rate: int = 22050
    silence_prob: float = 0.0

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticCorpusSpec":
        d = dict(d)
        inst = {
            name: InstrumentSignature(
                [float(f) for f in sig["frequencies"]],
                float(sig.get("noise", 0.01)),
                float(sig.get("amplitude", 0.3)),
            )
            for name, sig in d.pop("instruments").items()
        }
        if "polyphony" in d:
            d["polyphony"] = {int(k): float(v) for k, v in d["polyphony"].items()}
        if "segment_range" in d:
            d["segment_range"] = tuple(int(x) for x in d["segment_range"])
        d.pop("seed", None)
        return cls(instruments=inst, **d)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "SyntheticCorpusSpec":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def to_dict(self) -> dict:
        return {
            "instruments": {
                k: {"frequencies": v.frequencies, "noise": v.noise, "amplitude": v.amplitude}
                for k, v in self.instruments.items()
            },
            "n_tracks": self.n_tracks,
            "duration": self.duration,
            "polyphony": dict(self.polyphony),
            "segment_range": list(self.segment_range),
            "sample_rate": self.sample_rate,
            "silence_prob": self.silence_prob,
        }


def _signature_audio(sig: InstrumentSignature, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    for k, f in enumerate(sig.frequencies):
        # 1/k roll-off over the partial list gives each signature a fixed spectral envelope
        out += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) / (k + 1)
    out *= sig.amplitude / max(1.0, sum(1 / (k + 1) for k in range(len(sig.frequencies))))
    out += sig.noise * rng.standard_normal(n)
    return out


def generate_synthetic_corpus(
    spec: SyntheticCorpusSpec, seed: int, taxonomy: Taxonomy | None = None
) -> tuple[list[ActivationTrack], dict[str, np.ndarray]]:
    """Build ``spec.n_tracks`` tracks and their float32 mono audio.

    Tracks are cut into whole-second segments; each segment draws its
    polyphony from ``spec.polyphony`` and that many distinct instruments.
    """
    if taxonomy is not None:
        missing = sorted(set(spec.instruments) - set(taxonomy.instrument_assignments))
        if missing:
            raise ConfigError(f"synthetic instruments missing from taxonomy: {missing}")
    if not spec.instruments:
        raise ConfigError("synthetic corpus needs at least one instrument")
    names = sorted(spec.instruments)
    ks = sorted(spec.polyphony)
    if ks[0] < 0 or ks[-1] > len(names):
        raise ConfigError(f"polyphony values must lie in [0, {len(names)}]")
    probs = np.array([spec.polyphony[k] for k in ks], dtype=float)
    probs /= probs.sum()
    lo, hi = spec.segment_range
    sr = spec.sample_rate
    n_sec = int(spec.duration)

    rng = np.random.default_rng(seed)
    tracks, audio = [], {}
    width = len(str(spec.n_tracks - 1))
    for t in range(spec.n_tracks):
        track_id = f"synth_{t:0{width}d}"
        activations: dict[str, list[tuple[float, float]]] = {}
        pos = 0
        while pos < n_sec:
            length = min(int(rng.integers(lo, hi + 1)), n_sec - pos)
            k = 0 if rng.random() < spec.silence_prob else int(rng.choice(ks, p=probs))
            for inst in rng.choice(names, size=k, replace=False):
                activations.setdefault(str(inst), []).append((float(pos), float(pos + length)))
            pos += length
        track = ActivationTrack(track_id, float(spec.duration), activations)
        signal = 1e-4 * rng.standard_normal(int(round(spec.duration * sr)))
        for inst, ivs in sorted(track.activations.items()):
            for s, e in ivs:
                a, b = int(round(s * sr)), int(round(e * sr))
                signal[a:b] += _signature_audio(spec.instruments[inst], b - a, sr, rng)
        tracks.append(track)
        audio[track_id] = signal.astype(np.float32)
    return tracks, audio


def write_wav(path: str | Path, audio: np.ndarray, sample_rate: int) -> None:
    from scipy.io import wavfile

    wavfile.write(str(path), sample_rate, np.asarray(audio, dtype=np.float32))


def read_wav(path: str | Path, target_rate: int = 22050) -> np.ndarray:
    """Mono float audio at ``target_rate`` (polyphase resampling when needed)."""
    from math import gcd

    from scipy.io import wavfile
    from scipy.signal import resample_poly

    rate, data = wavfile.read(str(path))
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max)
    elif data.dtype.kind == "u":
        data = (data.astype(np.float64) - 128) / 128
    data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != target_rate:
        g = gcd(rate, target_rate)
        data = resample_poly(data, target_rate // g, rate // g)
    return data
