"""Multi-label losses over sigmoid outputs: balanced BCE, focal, level-weighted."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)

EPS = 1e-7
LOSS_KINDS = ("balanced_ce", "focal", "level_weighted")


@dataclass
class LossConfig:
    kind: str = "focal"
    alpha: float = 0.5
    gamma: float = 2.0
    class_weights: Sequence[float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.class_weights is not None and self.kind == "balanced_ce":
            if np.any(np.asarray(self.class_weights) <= 0):
                raise ValueError("class weights must be strictly positive")


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS, 1 - EPS) if p.dtype != torch.float64 else p.clamp(1e-15, 1 - 1e-15)


def _check(p: torch.Tensor, y: torch.Tensor) -> None:
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {tuple(p.shape)} != target shape {tuple(y.shape)}")


def bce_terms(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Elementwise -[y log p + (1-y) log(1-p)]."""
    _check(predictions, targets)
    p = _clamp(predictions)
    return -(targets * torch.log(p) + (1 - targets) * torch.log1p(-p))


def bce(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return bce_terms(predictions, targets).mean()


def balanced_ce(predictions: torch.Tensor, targets: torch.Tensor, class_weights) -> torch.Tensor:
    w = torch.as_tensor(class_weights, dtype=predictions.dtype, device=predictions.device)
    if w.ndim != 1 or w.shape[0] != predictions.shape[-1]:
        raise ValueError(f"class weight length {tuple(w.shape)} != label count {predictions.shape[-1]}")
    return (bce_terms(predictions, targets) * w).mean()


def focal_terms(predictions: torch.Tensor, targets: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    _check(predictions, targets)
    p = _clamp(predictions)
    p_t = targets * p + (1 - targets) * (1 - p)
    log_p_t = targets * torch.log(p) + (1 - targets) * torch.log1p(-p)
    if gamma == 0:
        return -log_p_t
    return -((1 - p_t) ** gamma) * log_p_t


def focal(predictions: torch.Tensor, targets: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    return focal_terms(predictions, targets, gamma).mean()


def level_weighted(
    predictions: torch.Tensor,
    targets: torch.Tensor,
    alpha: float,
    instrument_mask,
    base_terms: Callable[[torch.Tensor, torch.Tensor], torch.Tensor] = bce_terms,
) -> torch.Tensor:
    """Per-label base loss scaled by alpha on instrument columns and 1-alpha on group columns."""
    if instrument_mask is None:
        raise ValueError("level_weighted needs the instrument/group index partition")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    mask = torch.as_tensor(np.asarray(instrument_mask, dtype=bool), device=predictions.device)
    if mask.shape[0] != predictions.shape[-1]:
        raise ValueError("instrument mask length does not match label count")
    scale = torch.where(mask, alpha, 1 - alpha).to(predictions.dtype)
    return (base_terms(predictions, targets) * scale).mean()


def compute_class_weights(train_labels: np.ndarray) -> np.ndarray:
    """Inverse label frequency N / n_c, rescaled to mean 1.

    Labels that never occur are clamped to n_c = 1 (with a warning).
    """
    labels = np.asarray(train_labels)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise ValueError("need a non-empty (frames, labels) matrix")
    n = labels.shape[0]
    counts = (labels > 0).sum(axis=0).astype(float)
    zero = counts == 0
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} label(s) never occur in training data; weight clamped with n_c = 1",
            RuntimeWarning,
            stacklevel=2,
        )
        counts[zero] = 1.0
    raw = n / counts
    return raw / raw.mean()


def make_loss(config: LossConfig, instrument_mask=None) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    if config.kind == "balanced_ce":
        if config.class_weights is None:
            raise ValueError("balanced_ce needs class weights")
        weights = np.asarray(config.class_weights, dtype=float)
        return lambda p, y: balanced_ce(p, y, torch.as_tensor(weights, dtype=p.dtype))
    if config.kind == "focal":
        return lambda p, y: focal(p, y, config.gamma)
    mask = np.asarray(instrument_mask, dtype=bool) if instrument_mask is not None else None
    return lambda p, y: level_weighted(p, y, config.alpha, mask)
