"""Micro/per-label scores, label co-occurrence matrices and hierarchy audits."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .taxonomy import LabelSpace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return safe_div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return safe_div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    @property
    def support(self) -> int:
        return self.tp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    labels: tuple[str, ...]
    per_label: Mapping[str, LabelScore]
    micro_groups: LabelScore
    micro_instruments: LabelScore
    n_frames: int
    display_names: Mapping[str, str]

    @property
    def micro_all(self) -> LabelScore:
        a, b = self.micro_groups, self.micro_instruments
        return LabelScore(a.tp + b.tp, a.fp + b.fp, a.fn + b.fn)

    @property
    def support(self) -> dict[str, int]:
        return {k: v.support for k, v in self.per_label.items()}


def safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    s = precision + recall
    return 2 * precision * recall / s if s > 0 else 0.0


def _counts(pred: np.ndarray, true: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = ((pred == 1) & (true == 1)).sum(axis=0)
    fp = ((pred == 1) & (true == 0)).sum(axis=0)
    fn = ((pred == 0) & (true == 1)).sum(axis=0)
    return tp, fp, fn


def _as_binary(a) -> np.ndarray:
    return (np.asarray(a) > 0).astype(np.uint8)


def score(predictions, targets, space: LabelSpace) -> MetricsReport:
    pred, true = _as_binary(predictions), _as_binary(targets)
    if pred.shape != true.shape or pred.ndim != 2 or pred.shape[1] != space.dim:
        raise ValueError(
            f"predictions {pred.shape} and targets {true.shape} must both be (N, {space.dim})"
        )
    tp, fp, fn = _counts(pred, true)
    per = {lab: LabelScore(int(tp[k]), int(fp[k]), int(fn[k])) for k, lab in enumerate(space.labels)}

    def pooled(idx):
        return LabelScore(int(tp[idx].sum()), int(fp[idx].sum()), int(fn[idx].sum()))

    return MetricsReport(
        space.labels, per, pooled(space.group_indices), pooled(space.instrument_indices),
        int(pred.shape[0]), dict(space.group_names),
    )


# --------------------------------------------------------------------------- co-occurrence


@dataclass(frozen=True)
class CooccurrenceMatrix:
    labels: tuple[str, ...]
    raw: np.ndarray
    normalized: np.ndarray


def normalize_columns(raw: np.ndarray) -> np.ndarray:
    """Column-wise min-max scaling over off-diagonal entries; zero diagonal.

    A column whose off-diagonal entries are all equal maps to 0.
    """
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[0]
    if raw.ndim != 2 or raw.shape[1] != n:
        raise ValueError("co-occurrence matrix must be square")
    off = ~np.eye(n, dtype=bool)
    out = np.zeros_like(raw)
    for j in range(n):
        col = raw[off[:, j], j]
        if col.size == 0:
            continue
        lo, hi = col.min(), col.max()
        if hi > lo:
            out[:, j] = (raw[:, j] - lo) / (hi - lo)
    np.fill_diagonal(out, 0.0)
    return out


def _instrument_block(a, n_inst: int | None) -> np.ndarray:
    a = _as_binary(a)
    return a[:, :n_inst] if n_inst is not None else a


def cooccurrence(targets, labels: Sequence[str], n_instruments: int | None = None) -> CooccurrenceMatrix:
    """Frames in which instruments i and j are both present (over instrument columns)."""
    y = _instrument_block(targets, n_instruments).astype(np.int64)
    if y.shape[1] < 2 or len(labels) != y.shape[1]:
        raise ValueError("co-occurrence needs at least two labels, one name per column")
    raw = y.T @ y
    return CooccurrenceMatrix(tuple(labels), raw, normalize_columns(raw))


def fp_cooccurrence(predictions, targets, labels: Sequence[str], n_instruments: int | None = None) -> CooccurrenceMatrix:
    """raw[i, j]: frames where i is a false positive and j is truly present."""
    p = _instrument_block(predictions, n_instruments).astype(np.int64)
    y = _instrument_block(targets, n_instruments).astype(np.int64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    false_pos = p * (1 - y)
    raw = false_pos.T @ y
    return CooccurrenceMatrix(tuple(labels), raw, normalize_columns(raw))


def fn_cooccurrence(predictions, targets, labels: Sequence[str], n_instruments: int | None = None) -> CooccurrenceMatrix:
    """raw[i, j]: frames where i is a false negative and j is predicted."""
    p = _instrument_block(predictions, n_instruments).astype(np.int64)
    y = _instrument_block(targets, n_instruments).astype(np.int64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    false_neg = (1 - p) * y
    raw = false_neg.T @ p
    return CooccurrenceMatrix(tuple(labels), raw, normalize_columns(raw))


@dataclass(frozen=True)
class Violation:
    frame: int
    instrument: str
    group: str


def consistency_audit(predictions, space: LabelSpace) -> list[Violation]:
    """Every (frame, instrument) predicted while the instrument's group is not."""
    pred = _as_binary(predictions)
    out = []
    for inst in space.instruments:
        g = space.instrument_group[inst]
        bad = np.flatnonzero((pred[:, space.index[inst]] == 1) & (pred[:, space.index[g]] == 0))
        out.extend(Violation(int(f), inst, g) for f in bad)
    return sorted(out, key=lambda v: (v.frame, v.instrument))


# --------------------------------------------------------------------------- reports

REPORT_FILES = ("metrics_per_label", "metrics_summary", "cooc", "cooc_fp", "cooc_fn")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_matrix(path: Path, m: CooccurrenceMatrix, which: str) -> None:
    data = m.raw if which == "raw" else m.normalized
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["", *m.labels])
        for lab, row in zip(m.labels, data):
            w.writerow([lab, *(str(int(v)) if which == "raw" else _fmt(v) for v in row)])


def emit_reports(
    report: MetricsReport,
    matrices: Mapping[str, CooccurrenceMatrix],
    out_dir: str | Path,
    render: bool = False,
) -> list[Path]:
    """Write per-label and summary tables and each co-occurrence matrix as CSV.

    ``matrices`` keys are file stems (``cooc``, ``cooc_fp``, ``cooc_fn``); each
    is written normalized (``<stem>.csv``) and raw (``<stem>_raw.csv``).
    """
    if report.n_frames == 0:
        raise ValueError("empty test set: nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    rows = sorted(report.per_label.items(), key=lambda kv: (-kv[1].support, kv[0]))
    path = out_dir / "metrics_per_label.csv"
    group_set = set(report.display_names)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label", "name", "level", "support", "tp", "fp", "fn", "precision", "recall", "f1"])
        for lab, s in rows:
            w.writerow([
                lab, report.display_names.get(lab, lab), "group" if lab in group_set else "instrument",
                s.support, s.tp, s.fp, s.fn, _fmt(s.precision), _fmt(s.recall), _fmt(s.f1),
            ])
    written.append(path)

    path = out_dir / "metrics_summary.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["level", "frames", "tp", "fp", "fn", "precision", "recall", "f1"])
        for level, s in (("groups", report.micro_groups), ("instruments", report.micro_instruments), ("all", report.micro_all)):
            w.writerow([level, report.n_frames, s.tp, s.fp, s.fn, _fmt(s.precision), _fmt(s.recall), _fmt(s.f1)])
    written.append(path)

    for stem, m in sorted(matrices.items()):
        for which, suffix in (("normalized", ""), ("raw", "_raw")):
            p = out_dir / f"{stem}{suffix}.csv"
            write_matrix(p, m, which)
            written.append(p)

    if render:
        written.extend(_render(report, matrices, out_dir))
    return written


def _render(report: MetricsReport, matrices: Mapping[str, CooccurrenceMatrix], out_dir: Path) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib not available; skipping figures")
        return []
    paths = []
    rows = sorted(report.per_label.items(), key=lambda kv: -kv[1].support)
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(rows)), 4))
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [s.precision for _, s in rows], 0.4, label="precision")
    ax.bar(x + 0.2, [s.recall for _, s in rows], 0.4, label="recall")
    ax.set_xticks(x, [report.display_names.get(k, k) for k, _ in rows], rotation=90, fontsize=6)
    ax.legend()
    fig.tight_layout()
    p = out_dir / "metrics_per_label.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    for stem, m in sorted(matrices.items()):
        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(m.normalized, vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(m.labels)), m.labels, rotation=90, fontsize=5)
        ax.set_yticks(range(len(m.labels)), m.labels, fontsize=5)
        fig.colorbar(im)
        fig.tight_layout()
        p = out_dir / f"{stem}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths
