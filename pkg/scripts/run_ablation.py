#!/usr/bin/env python3
"""Cluster-count / patience grid, or the curriculum-design rows.

Usage:
    python scripts/run_ablation.py                       # N x tau grid, 3 seeds
    python scripts/run_ablation.py --design              # vanilla / anti / curriculum x uniform / snr
    python scripts/run_ablation.py --n 5 20 --tau 200 --seeds 0
"""

import argparse
import logging
import statistics
from pathlib import Path

from timestep_curriculum import experiments as ex
from timestep_curriculum.config import ExperimentConfig, load_config


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--n", type=int, nargs="+", default=[5, 20, 50])
    p.add_argument("--tau", type=int, nargs="+", default=[50, 200, 800])
    p.add_argument("--design", action="store_true")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")

    base = load_config(args.config) if args.config else ExperimentConfig()
    if args.design:
        cells = ex.DESIGN_CELLS
        keys = ["strategy", "cluster_mode"]
    else:
        cells = ex.grid_cells(n_clusters=args.n, tau_max=args.tau) + [{"strategy": "vanilla"}]
        keys = ["strategy", "n_clusters", "tau_max"]
    rows = ex.ablate(base, cells, args.seeds, root=Path(args.out), workers=args.workers)
    ex.write_rows(Path(args.out) / "grid.csv", rows)

    medians = ex.median_by_cell(rows, keys)
    for key, m in sorted(medians.items(), key=lambda kv: kv[1]):
        print("  ".join(f"{k}={v}" for k, v in zip(keys, key)), f"median={m:.4f}")
    n_bad = sum(r["status"] != "ok" for r in rows)
    if n_bad:
        print(f"{n_bad} cells failed, see grid.csv")


if __name__ == "__main__":
    main()
