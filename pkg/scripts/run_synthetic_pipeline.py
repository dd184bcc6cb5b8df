"""Generate a synthetic corpus and run split, features, training and evaluation.

    python scripts/run_synthetic_pipeline.py --config configs/synthetic.yaml
    python scripts/run_synthetic_pipeline.py --config configs/synthetic.yaml --strategy specialized --gate 0.5
"""

import argparse
import csv
import logging
import time
from pathlib import Path

from hierinst import pipeline
from hierinst.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/synthetic.yaml")
    ap.add_argument("--out")
    ap.add_argument("--strategy", choices=["flat", "specialized"])
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--gate", type=float, help="gating threshold for specialized inference")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = {"training": {}, "evaluation": {}}
    if args.out:
        overrides["out"] = args.out
    if args.strategy:
        overrides["training"]["strategy"] = args.strategy
    if args.epochs:
        overrides["training"]["epochs"] = args.epochs
    if args.gate is not None:
        overrides["evaluation"]["gating_threshold"] = args.gate
    cfg = load_config(args.config, overrides)

    start = time.perf_counter()
    pipeline.run_synth(cfg)
    pipeline.run_split(cfg)
    _, errors = pipeline.run_features(cfg)
    if errors:
        raise SystemExit(f"feature extraction failed for {sorted(errors)}")
    pipeline.run_train(cfg)
    pipeline.run_evaluate(cfg)

    with open(Path(cfg.out) / "reports" / "metrics_summary.csv") as f:
        for row in csv.DictReader(f):
            print(f"{row['level']:<12} P={row['precision']}  R={row['recall']}  F1={row['f1']}")
    print(f"wall time {time.perf_counter() - start:.0f} s, outputs in {cfg.out}")


if __name__ == "__main__":
    main()
