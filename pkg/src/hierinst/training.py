"""Flat and group-specialized training, two-pass inference and binarization."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from . import network
from .losses import LossConfig, compute_class_weights, make_loss
from .network import Checkpoint, CompatibilityError, NetworkSpec
from .taxonomy import LabelSpace

logger = logging.getLogger(__name__)

ENSEMBLE_FORMAT = 1


@dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.001
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    strategy: str = "flat"
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    widths: tuple[int, int, int] = (64, 128, 256)
    hidden: tuple[int, int] = (256, 128)
    compile_model: bool = False  # torch.compile the training forward pass

    def __post_init__(self):
        if isinstance(self.loss, Mapping):
            self.loss = LossConfig(**self.loss)
        self.betas = tuple(self.betas)
        self.widths = tuple(self.widths)
        self.hidden = tuple(self.hidden)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.strategy not in ("flat", "specialized"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def network_spec(self, output_dim: int) -> NetworkSpec:
        return NetworkSpec(
            output_dim=output_dim,
            dropout_rate=self.dropout_rate,
            leaky_slope=self.leaky_slope,
            widths=self.widths,
            hidden=self.hidden,
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]


def _check_data(features: np.ndarray, labels: np.ndarray, dim: int | None = None) -> None:
    if len(features) == 0:
        raise ValueError("empty training set")
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} feature blocks but {len(labels)} label rows")
    if dim is not None and labels.shape[1] != dim:
        raise ValueError(f"label dimension {labels.shape[1]} != label space dimension {dim}")


def fit_model(
    features: np.ndarray,
    targets: np.ndarray,
    config: TrainingConfig,
    instrument_mask=None,
    seed: int | None = None,
    **metadata,
) -> TrainResult:
    """Train one network on (features, targets) with Adam and the configured loss."""
    seed = config.seed if seed is None else seed
    targets = np.asarray(targets, dtype=np.float32)
    loss_cfg = config.loss
    if loss_cfg.kind == "balanced_ce" and loss_cfg.class_weights is None:
        loss_cfg = LossConfig(
            loss_cfg.kind, loss_cfg.alpha, loss_cfg.gamma, compute_class_weights(targets)
        )
    loss_fn = make_loss(loss_cfg, instrument_mask)

    torch.manual_seed(seed)
    model = network.build(config.network_spec(targets.shape[1]))
    model.set_input_stats(features)
    opt = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps
    )
    x_all = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    y_all = torch.as_tensor(targets)
    gen = torch.Generator().manual_seed(seed)
    n = len(x_all)
    step_model = torch.compile(model) if config.compile_model else model
    log = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        start = time.perf_counter()
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for b in range(0, n, config.batch_size):
            idx = order[b : b + config.batch_size]
            if len(idx) < 2:
                # batch norm needs more than one sample per channel in train mode
                continue
            opt.zero_grad()
            try:
                out = step_model(x_all[idx])
            except Exception as exc:  # noqa: BLE001 - compiler backends fail in many ways
                if step_model is model:
                    raise
                logger.warning("torch.compile failed (%s); training eagerly", type(exc).__name__)
                step_model = model
                out = model(x_all[idx])
            loss = loss_fn(out, y_all[idx])
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        row = {"epoch": epoch, "mean_loss": total / n, "wall_time": time.perf_counter() - start}
        log.append(row)
        logger.info("epoch %d/%d loss %.5f (%.1fs)", epoch, config.epochs, row["mean_loss"], row["wall_time"])
    model.eval()
    ckpt = Checkpoint.from_model(
        model,
        epoch=config.epochs,
        seed=seed,
        loss=loss_cfg.kind,
        final_loss=log[-1]["mean_loss"],
        **metadata,
    )
    return TrainResult(ckpt, log)


def train_flat(
    features: np.ndarray, labels: np.ndarray, space: LabelSpace, config: TrainingConfig
) -> TrainResult:
    labels = np.asarray(labels)
    _check_data(features, labels, space.dim)
    return fit_model(
        features,
        labels,
        config,
        instrument_mask=space.instrument_mask,
        label_fingerprint=space.fingerprint(),
        labels=list(space.labels),
        strategy="flat",
    )


@dataclass
class SpecializedEnsemble:
    group_model: Checkpoint
    instrument_models: dict[str, Checkpoint]
    space: LabelSpace
    gating_threshold: float | None = None

    def __post_init__(self):
        for g, ckpt in self.instrument_models.items():
            if ckpt.spec.output_dim != len(self.space.members(g)):
                raise CompatibilityError(
                    f"model for group {g} has {ckpt.spec.output_dim} outputs, "
                    f"group has {len(self.space.members(g))} instruments"
                )
        if self.group_model.spec.output_dim != len(self.space.groups):
            raise CompatibilityError("group model output dimension != number of groups")

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        network.save(self.group_model, directory / "group_model.pt")
        files = {}
        for k, g in enumerate(self.space.groups):
            if g in self.instrument_models:
                files[g] = f"instruments_{g}.pt"
                network.save(self.instrument_models[g], directory / files[g])
        layout = {
            "format": ENSEMBLE_FORMAT,
            "label_space": self.space.to_dict(),
            "fingerprint": self.space.fingerprint(),
            "group_model": "group_model.pt",
            "instrument_models": files,
            "gating_threshold": self.gating_threshold,
        }
        (directory / "layout.json").write_text(json.dumps(layout, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path, fingerprint: str | None = None) -> "SpecializedEnsemble":
        directory = Path(directory)
        layout_path = directory / "layout.json"
        if not layout_path.exists():
            raise FileNotFoundError(f"missing checkpoint: {layout_path}")
        layout = json.loads(layout_path.read_text())
        if layout.get("format") != ENSEMBLE_FORMAT:
            raise network.CheckpointError(f"{layout_path}: unsupported ensemble format")
        space = LabelSpace.from_dict(layout["label_space"])
        if fingerprint is not None and fingerprint != space.fingerprint():
            raise CompatibilityError("ensemble label space does not match the current label space")
        return cls(
            network.load(directory / layout["group_model"]),
            {g: network.load(directory / f) for g, f in layout["instrument_models"].items()},
            space,
            layout.get("gating_threshold"),
        )


def train_specialized(
    features: np.ndarray, labels: np.ndarray, space: LabelSpace, config: TrainingConfig
) -> tuple[SpecializedEnsemble, dict[str, list[dict]]]:
    """One group model over all groups plus one instrument model per group.

    Every model sees every frame; instrument models get targets restricted to
    their group's instruments (all-zero on frames without them).
    """
    labels = np.asarray(labels)
    _check_data(features, labels, space.dim)
    fp = space.fingerprint()
    logs = {}
    group_cols = space.group_indices
    res = fit_model(
        features, labels[:, group_cols], config,
        instrument_mask=np.zeros(len(group_cols), dtype=bool),
        label_fingerprint=fp, role="group",
    )
    group_model, logs["groups"] = res.checkpoint, res.log
    models = {}
    for k, g in enumerate(space.groups):
        members = space.members(g)
        if not members:
            warnings.warn(f"group {g} has no instruments; skipped", RuntimeWarning, stacklevel=2)
            continue
        cols = [space.index[i] for i in members]
        res = fit_model(
            features, labels[:, cols], config,
            instrument_mask=np.ones(len(cols), dtype=bool),
            seed=config.seed + k + 1,
            label_fingerprint=fp, role=f"instruments:{g}", labels=members,
        )
        models[g], logs[g] = res.checkpoint, res.log
    return SpecializedEnsemble(group_model, models, space), logs


def _predict(ckpt_or_model, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model = ckpt_or_model.to_model() if isinstance(ckpt_or_model, Checkpoint) else ckpt_or_model
    model.eval()
    x = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    outs = []
    with torch.no_grad():
        for b in range(0, len(x), batch_size):
            outs.append(model(x[b : b + batch_size]).numpy())
    if not outs:
        return np.zeros((0, model.spec.output_dim), dtype=np.float32)
    return np.concatenate(outs)


def combine_specialized(
    group_act: np.ndarray,
    instrument_act: Mapping[str, np.ndarray],
    space: LabelSpace,
    gating_threshold: float | None = None,
) -> np.ndarray:
    """Lay group and per-group instrument activations out in label-space order.

    With a gate, a group's instrument outputs are zeroed on frames where the
    group activation is below the gate.
    """
    n = group_act.shape[0]
    out = np.zeros((n, space.dim), dtype=np.float32)
    out[:, space.group_indices] = group_act
    for k, g in enumerate(space.groups):
        if g not in instrument_act:
            continue
        cols = [space.index[i] for i in space.members(g)]
        acts = np.asarray(instrument_act[g], dtype=np.float32)
        if gating_threshold is not None:
            acts = np.where((group_act[:, k] >= gating_threshold)[:, None], acts, 0.0)
        out[:, cols] = acts
    return out


def infer(
    model, features: np.ndarray, space: LabelSpace | None = None, gating_threshold: float | None = None
) -> np.ndarray:
    """Activations over the full instrument+group layout for a flat checkpoint or an ensemble."""
    if isinstance(model, SpecializedEnsemble):
        if space is not None and space.fingerprint() != model.space.fingerprint():
            raise CompatibilityError("ensemble layout does not match the label space")
        gate = model.gating_threshold if gating_threshold is None else gating_threshold
        group_act = _predict(model.group_model, features)
        inst = {g: _predict(m, features) for g, m in model.instrument_models.items()}
        return combine_specialized(group_act, inst, model.space, gate)
    if space is not None and isinstance(model, Checkpoint):
        model.check_compatible(space.fingerprint())
    out = _predict(model, features)
    if space is not None and out.shape[1] != space.dim:
        raise CompatibilityError(f"model has {out.shape[1]} outputs, label space has {space.dim}")
    return out


def decide(activations: np.ndarray, decision_threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(activations) >= decision_threshold).astype(np.uint8)


def write_training_log(log: Sequence[dict], path: str | Path, include_time: bool = True) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "wall_time"] if include_time else ["epoch", "mean_loss"])
        for row in log:
            vals = [row["epoch"], f"{row['mean_loss']:.8f}"]
            if include_time:
                vals.append(f"{row['wall_time']:.3f}")
            w.writerow(vals)


def parameter_count(ckpt: Checkpoint) -> int:
    return sum(p.numel() for p in ckpt.to_model().parameters())


def checkpoint_max_deviation(a, b, probe: np.ndarray) -> float:
    return float(np.max(np.abs(infer(a, probe) - infer(b, probe)))) if len(probe) else 0.0


__all__ = [
    "TrainingConfig", "TrainResult", "SpecializedEnsemble", "train_flat", "train_specialized",
    "infer", "decide", "combine_specialized", "fit_model", "write_training_log",
]
