"""hierinst command line: ingest | synth | split | features | train | evaluate | cooc | alpha-sweep.

Exit codes: 0 success, 1 runtime error (one ``error[<category>]: message``
line on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .dataset import IngestionError, LabelingError, ParseError
from .network import CheckpointError, CompatibilityError
from .synth import ConfigError
from .taxonomy import TaxonomyError, UnknownLabelError

logger = logging.getLogger("hierinst")

COMMANDS = {
    "ingest": pipeline.run_ingest,
    "synth": pipeline.run_synth,
    "split": pipeline.run_split,
    "features": pipeline.run_features,
    "train": pipeline.run_train,
    "evaluate": pipeline.run_evaluate,
    "cooc": pipeline.run_cooc,
    "alpha-sweep": pipeline.run_alpha_sweep,
}

# files whose content carries wall-clock values; listed in the manifest but not hashed
VOLATILE = {"training_log.csv"}


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="work/output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--depth", type=int, help="taxonomy truncation depth")
    common.add_argument("--taxonomy", help="taxonomy document (default: bundled MedleyDB tree)")
    common.add_argument("--test-fraction", type=float)
    common.add_argument("--strategy", choices=["flat", "specialized"])
    common.add_argument("--loss", choices=["balanced_ce", "focal", "level_weighted"])
    common.add_argument("--alpha", type=float, help="level weight for level_weighted")
    common.add_argument("--epochs", type=int)
    common.add_argument("--gating-threshold", type=float)
    common.add_argument("--decision-threshold", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hierinst", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="read MedleyDB metadata and activations")
    p.add_argument("--corpus-root", help="MedleyDB root (default: $HIERINST_CORPUS)")
    p.add_argument("--metadata-dir")
    p.add_argument("--annotations-dir")
    p.add_argument("--audio-dir")
    p.add_argument("--confidence-threshold", type=float)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--corpus-spec", help="synthetic corpus YAML (default: bundled)")
    sub.add_parser("split", parents=[common], help="track-level train/test split and frame labels")
    sub.add_parser("features", parents=[common], help="MFCC feature store")
    sub.add_parser("train", parents=[common], help="train a flat model or a specialized ensemble")
    p = sub.add_parser("evaluate", parents=[common], help="score the trained model on the test split")
    p.add_argument("--render", action="store_true", help="also write PNG figures")
    sub.add_parser("cooc", parents=[common], help="training-set instrument co-occurrence")
    p = sub.add_parser("alpha-sweep", parents=[common], help="grid search of the level weight")
    p.add_argument("--alphas", type=_floats, help="comma-separated, e.g. 0.1,0.5,0.9")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    o: dict = {}

    def put(path: str, value):
        if value is None:
            return
        node = o
        *parents, leaf = path.split(".")
        for k in parents:
            node = node.setdefault(k, {})
        node[leaf] = value

    a = vars(args)
    put("out", a.get("out"))
    put("seed", a.get("seed"))
    put("depth", a.get("depth"))
    put("taxonomy", a.get("taxonomy"))
    put("split.test_fraction", a.get("test_fraction"))
    put("training.strategy", a.get("strategy"))
    put("training.loss.kind", a.get("loss"))
    put("training.loss.alpha", a.get("alpha"))
    put("training.epochs", a.get("epochs"))
    put("evaluation.gating_threshold", a.get("gating_threshold"))
    put("evaluation.decision_threshold", a.get("decision_threshold"))
    put("evaluation.render", True if a.get("render") else None)
    put("corpus_root", a.get("corpus_root"))
    put("medleydb.metadata_dir", a.get("metadata_dir"))
    put("medleydb.annotations_dir", a.get("annotations_dir"))
    put("medleydb.audio_dir", a.get("audio_dir"))
    put("medleydb.confidence_threshold", a.get("confidence_threshold"))
    put("synthetic_corpus", a.get("corpus_spec"))
    put("alphas", a.get("alphas"))
    return o


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, artifacts, started: float, extra: dict | None = None) -> Path:
    out = Path(cfg.out)
    hashes, volatile = {}, []
    for p in sorted({Path(a) for a in artifacts}):
        rel = str(p.relative_to(out)) if p.is_relative_to(out) else str(p)
        if p.name in VOLATILE:
            volatile.append(rel)
        elif p.is_file():
            hashes[rel] = _sha256(p)
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "artifacts": hashes,
        "volatile_artifacts": volatile,
        **(extra or {}),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "wall_time": round(time.time() - started, 3),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def _category(exc: BaseException) -> str:
    if isinstance(exc, pipeline.MissingArtifactError):
        return exc.category.replace(" ", "-")
    for types, name in (
        (CompatibilityError, "compatibility"),
        (CheckpointError, "checkpoint"),
        (TaxonomyError, "taxonomy"),
        (UnknownLabelError, "unknown-label"),
        (IngestionError, "ingestion"),
        (ParseError, "parse"),
        (LabelingError, "labeling"),
        (ConfigError, "config"),
        (FileNotFoundError, "missing-input"),
        (ValueError, "invalid-value"),
    ):
        if isinstance(exc, types):
            return name
    return "runtime"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    started = time.time()
    try:
        cfg = load_config(args.config, overrides_from_args(args))
    except (OSError, ValueError, TypeError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 1
    try:
        result = COMMANDS[args.command](cfg)
        extra = {}
        if isinstance(result, tuple):
            result, errors = result
            extra["errors"] = errors
        write_manifest(cfg, args.command, result, started, extra)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit status
        logger.debug("failure", exc_info=True)
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error[{_category(exc)}]: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
