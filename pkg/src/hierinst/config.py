"""Run configuration: dataclass defaults, overlaid by a YAML file, overlaid by CLI flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .losses import LossConfig
from .training import TrainingConfig

CORPUS_ENV = "HIERINST_CORPUS"


@dataclass
class SplitConfig:
    test_fraction: float = 0.2
    max_divergence: float = 0.2
    iterations: int = 2000


@dataclass
class MedleyDBConfig:
    metadata_dir: str | None = None
    annotations_dir: str | None = None
    audio_dir: str | None = None
    confidence_threshold: float = 0.5


@dataclass
class EvalConfig:
    decision_threshold: float = 0.5
    gating_threshold: float | None = None
    render: bool = False


@dataclass
class RunConfig:
    out: str = "runs/default"
    taxonomy: str | None = None  # None: bundled MedleyDB taxonomy
    corpus_root: str | None = field(default_factory=lambda: os.environ.get(CORPUS_ENV))
    synthetic_corpus: str | None = None  # None: bundled synthetic corpus spec
    depth: int = 2
    seed: int = 0
    split: SplitConfig = field(default_factory=SplitConfig)
    medleydb: MedleyDBConfig = field(default_factory=MedleyDBConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    alphas: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0 < self.split.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        if not 0 < self.evaluation.decision_threshold < 1:
            raise ValueError("decision_threshold must be in (0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["training"]["loss"].pop("class_weights", None)
        return _plain(d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(d: Mapping) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    d = dict(d)
    training = dict(d.pop("training", {}))
    loss = training.pop("loss", {})
    return RunConfig(
        split=SplitConfig(**d.pop("split", {})),
        medleydb=MedleyDBConfig(**d.pop("medleydb", {})),
        training=TrainingConfig(loss=LossConfig(**loss), **training),
        evaluation=EvalConfig(**d.pop("evaluation", {})),
        **d,
    )


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> RunConfig:
    """Defaults < YAML file < overrides (nested dicts, e.g. from CLI flags)."""
    d = RunConfig().to_dict()
    if path is not None:
        with open(path) as f:
            file_cfg = yaml.safe_load(f) or {}
        if not isinstance(file_cfg, Mapping):
            raise ValueError(f"{path}: config must be a mapping")
        d = _merge(d, file_cfg)
    if overrides:
        d = _merge(d, overrides)
    return _build(d)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
