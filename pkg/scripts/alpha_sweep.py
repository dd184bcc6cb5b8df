"""Grid search over the level weight alpha on an existing work directory.

Needs the split and features steps to have run (e.g. via the CLI). Writes
alpha_sweep.csv and prints the alpha with the best all-node F1.

    python scripts/alpha_sweep.py --config configs/medleydb.yaml --alphas 0.1 0.3 0.5 0.7 0.9
"""

import argparse
import logging
from pathlib import Path

from hierinst import pipeline
from hierinst.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--alphas", type=float, nargs="+")
    ap.add_argument("--epochs", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = {}
    if args.alphas:
        overrides["alphas"] = args.alphas
    if args.epochs:
        overrides["training"] = {"epochs": args.epochs}
    cfg = load_config(args.config, overrides)

    space = pipeline.load_space(cfg)
    split = pipeline.load_split(cfg)
    xtr, ytr, _ = pipeline.load_xy(cfg, split.train_tracks)
    xte, yte, _ = pipeline.load_xy(cfg, split.test_tracks)
    rows = pipeline.alpha_grid_search(
        cfg.alphas, xtr, ytr, xte, yte, space, pipeline.training_config(cfg),
        cfg.evaluation.decision_threshold,
    )
    path = Path(cfg.out) / "alpha_sweep.csv"
    pipeline.write_alpha_table(rows, path)
    for r in rows:
        print(f"alpha={r['alpha']:<5g} all={r['f1_all_nodes']:.4f} groups={r['f1_groups']:.4f} "
              f"instruments={r['f1_instruments']:.4f}")
    print(f"best alpha {pipeline.best_alpha(rows):g}; table in {path}")


if __name__ == "__main__":
    main()
