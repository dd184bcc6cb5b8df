"""VGG-like classifier over (1, 80, 22) MFCC blocks, and checkpoint I/O."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
from torch import nn

from .features import FEATURE_SHAPE

CHECKPOINT_FORMAT = 1


class CheckpointError(RuntimeError):
    pass


class CompatibilityError(CheckpointError):
    pass


@dataclass
class NetworkSpec:
    output_dim: int
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    widths: tuple[int, int, int] = (64, 128, 256)
    hidden: tuple[int, int] = (256, 128)
    input_shape: tuple[int, int, int] = FEATURE_SHAPE

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.leaky_slope <= 0:
            raise ValueError("leaky_slope must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(**d)


class ConvBlock(nn.Sequential):
    def __init__(self, c_in, c_out, pool, slope):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.LeakyReLU(slope),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.LeakyReLU(slope),
            nn.MaxPool2d(pool),
        )


class InstrumentNet(nn.Module):
    """Three conv-conv-pool blocks, a (6, 1) collapse conv and a 3-layer sigmoid head."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        w1, w2, w3 = spec.widths
        h1, h2 = spec.hidden
        slope, p = spec.leaky_slope, spec.dropout_rate
        c, n_coef, n_time = spec.input_shape
        # per-coefficient input standardization, fitted on training data (buffers, not parameters)
        self.register_buffer("input_mean", torch.zeros(1, c, n_coef, 1))
        self.register_buffer("input_std", torch.ones(1, c, n_coef, 1))
        self.features = nn.Sequential(
            ConvBlock(c, w1, 2, slope),
            ConvBlock(w1, w2, 2, slope),
            ConvBlock(w2, w3, (3, 5), slope),
        )
        f, t = self._block_out_hw(n_coef, n_time)
        self.collapse = nn.Sequential(
            nn.Conv2d(w3, w3, (f, t)),
            nn.BatchNorm2d(w3),
            nn.LeakyReLU(slope),
        )
        self.head = nn.Sequential(
            nn.Dropout(p),
            nn.Linear(w3, h1),
            nn.LeakyReLU(slope),
            nn.Dropout(p),
            nn.Linear(h1, h2),
            nn.LeakyReLU(slope),
            nn.Dropout(p),
            nn.Linear(h2, spec.output_dim),
            nn.Sigmoid(),
        )

    @staticmethod
    def _block_out_hw(f: int, t: int) -> tuple[int, int]:
        f, t = f // 2, t // 2
        f, t = f // 2, t // 2
        return f // 3, t // 5

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.spec.input_shape:
            raise ValueError(
                f"expected input (N, {', '.join(map(str, self.spec.input_shape))}), got {tuple(x.shape)}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        x = (x - self.input_mean) / self.input_std
        x = self.collapse(self.features(x))
        return self.head(x.flatten(1))

    def set_input_stats(self, features: np.ndarray) -> None:
        feats = torch.as_tensor(np.asarray(features), dtype=self.input_mean.dtype)
        self.input_mean.copy_(feats.mean(dim=(0, 3), keepdim=True))
        self.input_std.copy_(feats.std(dim=(0, 3), keepdim=True).clamp_min(1e-3))


def build(spec: NetworkSpec) -> InstrumentNet:
    return InstrumentNet(spec)


def layer_parameter_counts(model: nn.Module) -> list[tuple[str, int]]:
    """Trainable parameter count per parametrized layer, in forward order."""
    out = []
    for name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv2d, nn.BatchNorm2d, nn.Linear)):
            out.append((name, sum(p.numel() for p in mod.parameters(recurse=False) if p.requires_grad)))
    return out


def shape_trace(model: InstrumentNet, batch: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    """(layer type, per-sample output shape) for every layer of a forward pass."""
    rows = [("Input", tuple(model.spec.input_shape))]
    was_training = model.training
    model.eval()
    x = torch.zeros(batch, *model.spec.input_shape)
    with torch.no_grad():
        for block in model.features:
            for layer in block:
                x = layer(x)
                if not isinstance(layer, nn.LeakyReLU):
                    rows.append((type(layer).__name__, tuple(x.shape[1:])))
        for layer in model.collapse:
            x = layer(x)
            if not isinstance(layer, nn.LeakyReLU):
                rows.append((type(layer).__name__, tuple(x.shape[1:])))
        x = x.flatten(1)
        rows.append(("Squeeze", tuple(x.shape[1:])))
        for layer in model.head:
            x = layer(x)
            if not isinstance(layer, nn.LeakyReLU):
                rows.append((type(layer).__name__, tuple(x.shape[1:])))
    model.train(was_training)
    return rows


def forward(model: InstrumentNet, batch, train_mode: bool = False) -> np.ndarray:
    model.train(train_mode)
    x = torch.as_tensor(np.asarray(batch), dtype=torch.float32)
    with torch.set_grad_enabled(train_mode):
        return model(x).detach().cpu().numpy()


# --------------------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    spec: NetworkSpec
    parameters: dict[str, torch.Tensor]
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: InstrumentNet, **metadata) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(model.spec, state, dict(metadata))

    def to_model(self) -> InstrumentNet:
        model = build(self.spec)
        try:
            model.load_state_dict(self.parameters)
        except RuntimeError as exc:
            raise CheckpointError(f"parameters inconsistent with spec: {exc}") from None
        model.eval()
        return model

    @property
    def fingerprint(self) -> str | None:
        return self.metadata.get("label_fingerprint")

    def check_compatible(self, fingerprint: str | None) -> None:
        if fingerprint is not None and self.fingerprint != fingerprint:
            raise CompatibilityError(
                f"checkpoint label space {str(self.fingerprint)[:12]} does not match "
                f"current label space {fingerprint[:12]}"
            )


def save(checkpoint: Checkpoint, path: str | Path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "spec": checkpoint.spec.to_dict(),
        "parameters": {k: v.cpu() for k, v in sorted(checkpoint.parameters.items())},
        "metadata": checkpoint.metadata,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(buf.getvalue())


def load(path: str | Path, fingerprint: str | None = None) -> Checkpoint:
    """Load a checkpoint; ``fingerprint`` (if given) must match the training label space."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    try:
        payload = torch.load(io.BytesIO(path.read_bytes()), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types on corrupt archives
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    ckpt = Checkpoint(NetworkSpec.from_dict(payload["spec"]), dict(payload["parameters"]), payload["metadata"])
    ckpt.check_compatible(fingerprint)
    return ckpt
