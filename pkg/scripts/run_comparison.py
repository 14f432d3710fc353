#!/usr/bin/env python3
"""Vanilla vs NaiveCL vs curriculum vs anti-curriculum at equal budget.

Usage:
    python scripts/run_comparison.py --seeds 0 1 2 3 4
    python scripts/run_comparison.py --iterations 5000 --seeds 0   # quick look
"""

import argparse
import logging
import statistics
from dataclasses import replace
from pathlib import Path

from timestep_curriculum import experiments as ex
from timestep_curriculum.config import ExperimentConfig, load_config

STRATEGIES = ("vanilla", "naive_cl", "curriculum", "anti_curriculum")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    p.add_argument("--config", help="base TOML/JSON config (defaults otherwise)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--iterations", type=int, help="override train.total_iterations")
    p.add_argument("--strategies", nargs="+", default=list(STRATEGIES), choices=STRATEGIES)
    p.add_argument("--out", default="runs/comparison")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")

    base = load_config(args.config) if args.config else ExperimentConfig()
    if args.iterations:
        base = replace(base, train=replace(base.train, total_iterations=args.iterations))
    cells = [{"strategy": s} for s in args.strategies]
    rows = ex.ablate(base, cells, args.seeds, root=Path(args.out), workers=args.workers)
    ex.write_rows(Path(args.out) / "comparison.csv", rows)

    print(f"{'strategy':<16} {'median':>8}  per-seed distance")
    for s in args.strategies:
        d = [r["distance"] for r in rows if r["strategy"] == s and r["status"] == "ok"]
        if d:
            print(f"{s:<16} {statistics.median(d):>8.4f}  " + " ".join(f"{v:.4f}" for v in d))
    bad = [r for r in rows if r["status"] != "ok"]
    for r in bad:
        print(f"FAILED {r['strategy']} seed {r['seed']}: {r['status']}")


if __name__ == "__main__":
    main()
