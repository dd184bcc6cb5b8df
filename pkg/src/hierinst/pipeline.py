"""Work-directory pipeline shared by the CLI and the experiment scripts.

Layout under ``cfg.out``::

    corpus/tracks.json       activation tracks
    corpus/source.json       where the audio lives
    corpus/audio/*.wav       synthetic audio (synth only)
    label_space.json
    frames.csv               frame manifest over all tracks
    split.json
    features/                feature store
    model/                   model.pt (flat) or an ensemble directory
    model/training_log.csv
    reports/                 metric tables and co-occurrence matrices
    alpha_sweep.csv
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import shutil
from importlib import resources
from pathlib import Path

import numpy as np

from . import dataset, evaluation, features, network, synth, taxonomy, training
from .config import RunConfig
from .losses import LossConfig
from .taxonomy import LabelSpace

logger = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    """A pipeline step ran before the step producing its input."""

    def __init__(self, category: str, path: Path):
        super().__init__(f"{category}: {path}")
        self.category = category


def bundled(name: str) -> Path:
    return Path(str(resources.files("hierinst").joinpath("data", name)))


def load_run_taxonomy(cfg: RunConfig) -> taxonomy.Taxonomy:
    return taxonomy.load_taxonomy(cfg.taxonomy) if cfg.taxonomy else taxonomy.default_taxonomy()


def label_space(cfg: RunConfig) -> LabelSpace:
    tax = taxonomy.truncate(load_run_taxonomy(cfg), cfg.depth)
    return taxonomy.build_label_space(tax, cfg.depth)


def _require(path: Path, category: str = "missing input") -> Path:
    if not path.exists():
        raise MissingArtifactError(category, path)
    return path


def out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------- steps


def run_synth(cfg: RunConfig) -> list[Path]:
    root = out_dir(cfg) / "corpus"
    (root / "audio").mkdir(parents=True, exist_ok=True)
    spec = synth.SyntheticCorpusSpec.from_yaml(cfg.synthetic_corpus or bundled("synthetic_corpus.yaml"))
    tracks, audio = synth.generate_synthetic_corpus(spec, cfg.seed, load_run_taxonomy(cfg))
    dataset.save_tracks(tracks, root / "tracks.json")
    written = [root / "tracks.json"]
    for tid, a in audio.items():
        p = root / "audio" / f"{tid}.wav"
        synth.write_wav(p, a, spec.sample_rate)
        written.append(p)
    (root / "source.json").write_text(json.dumps({"audio_pattern": str((root / "audio").resolve() / "{track_id}.wav")}))
    return written + [root / "source.json"]


def run_ingest(cfg: RunConfig) -> list[Path]:
    m = cfg.medleydb
    base = Path(cfg.corpus_root) if cfg.corpus_root else None
    meta = Path(m.metadata_dir) if m.metadata_dir else (base / "Metadata" if base else None)
    ann = Path(m.annotations_dir) if m.annotations_dir else (
        base / "Annotations" / "Instrument_Activations" / "ACTIVATION_CONF" if base else None
    )
    audio = Path(m.audio_dir) if m.audio_dir else (base / "Audio" if base else None)
    if meta is None or ann is None:
        raise ValueError("ingest needs medleydb.metadata_dir/annotations_dir or a corpus root")
    tracks = dataset.ingest_medleydb(_require(meta), _require(ann), m.confidence_threshold)
    root = out_dir(cfg) / "corpus"
    root.mkdir(exist_ok=True)
    dataset.save_tracks(tracks, root / "tracks.json")
    pattern = str(audio / "{track_id}" / "{track_id}_MIX.wav") if audio else None
    (root / "source.json").write_text(json.dumps({"audio_pattern": pattern}))
    logger.info("ingested %d tracks", len(tracks))
    return [root / "tracks.json", root / "source.json"]


def load_corpus(cfg: RunConfig) -> list[dataset.ActivationTrack]:
    return dataset.load_tracks(_require(Path(cfg.out) / "corpus" / "tracks.json"))


def run_split(cfg: RunConfig) -> list[Path]:
    out = out_dir(cfg)
    space = label_space(cfg)
    tracks = load_corpus(cfg)
    dataset.check_known_instruments(tracks, space)
    s = cfg.split
    split = dataset.split_tracks(tracks, space, s.test_fraction, cfg.seed, s.max_divergence, s.iterations)
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=1, sort_keys=True))
    (out / "label_space.json").write_text(json.dumps(space.to_dict(), indent=1, sort_keys=True))
    dataset.write_frame_manifest(dataset.frames_for_tracks(tracks, space), space, out / "frames.csv")
    return [out / "split.json", out / "label_space.json", out / "frames.csv"]


def load_space(cfg: RunConfig) -> LabelSpace:
    return LabelSpace.from_dict(json.loads(_require(Path(cfg.out) / "label_space.json").read_text()))


def run_features(cfg: RunConfig) -> tuple[list[Path], dict[str, str]]:
    out = out_dir(cfg)
    frames = dataset.read_frame_manifest(_require(out / "frames.csv"))
    source = json.loads(_require(out / "corpus" / "source.json").read_text())
    pattern = source.get("audio_pattern")
    if not pattern:
        raise ValueError("corpus has no audio location; set medleydb.audio_dir and re-run ingest")

    def audio_for(track_id: str) -> np.ndarray:
        return synth.read_wav(pattern.format(track_id=track_id), features.SAMPLE_RATE)

    errors = features.batch_extract(
        [(f.track_id, f.frame_index) for f in frames], audio_for, out / "features"
    )
    return [out / "features" / "index.csv"], errors


def load_xy(cfg: RunConfig, track_ids) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int]]]:
    out = Path(cfg.out)
    space = load_space(cfg)
    frames = dataset.read_frame_manifest(_require(out / "frames.csv"), space)
    store = features.FeatureStore(_require(out / "features" / "index.csv").parent)
    ids = set(track_ids)
    sel = [f for f in frames if f.track_id in ids and (f.track_id, f.frame_index) in store]
    refs = [(f.track_id, f.frame_index) for f in sel]
    return store.stack(refs), dataset.label_matrix(sel, space.dim), refs


def load_split(cfg: RunConfig) -> dataset.DatasetSplit:
    return dataset.DatasetSplit.from_dict(json.loads(_require(Path(cfg.out) / "split.json").read_text()))


def training_config(cfg: RunConfig, **changes) -> training.TrainingConfig:
    return dataclasses.replace(cfg.training, seed=cfg.seed, **changes)


def model_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out) / "model"


def run_train(cfg: RunConfig) -> list[Path]:
    space = load_space(cfg)
    x, y, _ = load_xy(cfg, load_split(cfg).train_tracks)
    tcfg = training_config(cfg)
    mdir = model_dir(cfg)
    if mdir.exists():
        shutil.rmtree(mdir)
    mdir.mkdir(parents=True)
    if tcfg.strategy == "flat":
        res = training.train_flat(x, y, space, tcfg)
        network.save(res.checkpoint, mdir / "model.pt")
        training.write_training_log(res.log, mdir / "training_log.csv")
        return [mdir / "model.pt", mdir / "training_log.csv"]
    ens, logs = training.train_specialized(x, y, space, tcfg)
    ens.gating_threshold = cfg.evaluation.gating_threshold
    ens.save(mdir)
    written = [mdir / "layout.json", mdir / "group_model.pt"]
    written += [mdir / f"instruments_{g}.pt" for g in ens.instrument_models]
    with open(mdir / "training_log.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "epoch", "mean_loss", "wall_time"])
        for name in logs:
            for r in logs[name]:
                w.writerow([name, r["epoch"], f"{r['mean_loss']:.8f}", f"{r['wall_time']:.3f}"])
    return written + [mdir / "training_log.csv"]


def load_model(cfg: RunConfig, space: LabelSpace):
    mdir = model_dir(cfg)
    if (mdir / "layout.json").exists():
        return training.SpecializedEnsemble.load(mdir, space.fingerprint())
    path = mdir / "model.pt"
    if not path.exists():
        raise MissingArtifactError("missing checkpoint", path)
    return network.load(path, space.fingerprint())


def run_evaluate(cfg: RunConfig) -> list[Path]:
    space = load_space(cfg)
    model = load_model(cfg, space)
    x, y, refs = load_xy(cfg, load_split(cfg).test_tracks)
    if len(x) == 0:
        raise ValueError("empty test set")
    act = training.infer(model, x, space, cfg.evaluation.gating_threshold)
    pred = training.decide(act, cfg.evaluation.decision_threshold)
    report = evaluation.score(pred, y, space)
    n = len(space.instruments)
    inst = list(space.instruments)
    _, train_y, _ = load_xy(cfg, load_split(cfg).train_tracks)
    matrices = {
        "cooc": evaluation.cooccurrence(train_y, inst, n),
        "cooc_fp": evaluation.fp_cooccurrence(pred, y, inst, n),
        "cooc_fn": evaluation.fn_cooccurrence(pred, y, inst, n),
    }
    rdir = Path(cfg.out) / "reports"
    written = evaluation.emit_reports(report, matrices, rdir, cfg.evaluation.render)
    violations = evaluation.consistency_audit(pred, space)
    with open(rdir / "consistency_violations.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["track_id", "frame_index", "instrument", "group"])
        for v in violations:
            w.writerow([*refs[v.frame], v.instrument, v.group])
    return written + [rdir / "consistency_violations.csv"]


def run_cooc(cfg: RunConfig) -> list[Path]:
    """Co-occurrence of instrument labels over the training tracks only."""
    space = load_space(cfg)
    frames = dataset.read_frame_manifest(_require(Path(cfg.out) / "frames.csv"), space)
    train = load_split(cfg).train_tracks
    y = dataset.label_matrix([f for f in frames if f.track_id in train], space.dim)
    m = evaluation.cooccurrence(y, list(space.instruments), len(space.instruments))
    rdir = Path(cfg.out) / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    evaluation.write_matrix(rdir / "cooc_train.csv", m, "normalized")
    evaluation.write_matrix(rdir / "cooc_train_raw.csv", m, "raw")
    return [rdir / "cooc_train.csv", rdir / "cooc_train_raw.csv"]


def alpha_grid_search(
    alphas, x_train, y_train, x_test, y_test, space: LabelSpace, config: training.TrainingConfig,
    decision_threshold: float = 0.5,
) -> list[dict]:
    """Train one level-weighted model per alpha (identical seeds) and score it on the test frames."""
    if not alphas:
        raise ValueError("empty alpha grid")
    rows = []
    for alpha in alphas:
        if not 0 <= alpha <= 1:
            raise ValueError(f"alpha {alpha} outside [0, 1]")
        cfg = dataclasses.replace(config, loss=LossConfig("level_weighted", alpha=float(alpha)))
        res = training.train_flat(x_train, y_train, space, cfg)
        pred = training.decide(training.infer(res.checkpoint, x_test), decision_threshold)
        rep = evaluation.score(pred, y_test, space)
        rows.append({
            "alpha": float(alpha),
            "f1_all_nodes": rep.micro_all.f1,
            "f1_groups": rep.micro_groups.f1,
            "f1_instruments": rep.micro_instruments.f1,
        })
    return rows


def best_alpha(rows: list[dict]) -> float:
    return max(rows, key=lambda r: r["f1_all_nodes"])["alpha"]


def write_alpha_table(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["alpha", "f1_all_nodes", "f1_groups", "f1_instruments"])
        for r in rows:
            w.writerow([f"{r['alpha']:g}", *(f"{r[k]:.6f}" for k in ("f1_all_nodes", "f1_groups", "f1_instruments"))])


def run_alpha_sweep(cfg: RunConfig) -> list[Path]:
    space = load_space(cfg)
    split = load_split(cfg)
    xtr, ytr, _ = load_xy(cfg, split.train_tracks)
    xte, yte, _ = load_xy(cfg, split.test_tracks)
    rows = alpha_grid_search(
        cfg.alphas, xtr, ytr, xte, yte, space, training_config(cfg), cfg.evaluation.decision_threshold
    )
    path = Path(cfg.out) / "alpha_sweep.csv"
    write_alpha_table(rows, path)
    logger.info("best alpha %g", best_alpha(rows))
    return [path]
