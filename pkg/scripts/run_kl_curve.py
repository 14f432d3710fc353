#!/usr/bin/env python3
"""KL divergence between consecutive forward marginals over a timestep grid.

Usage:
    python scripts/run_kl_curve.py                      # default 8 timesteps, M=5000
    python scripts/run_kl_curve.py --dense 25 --both    # 25 log-spaced t, both estimators
"""

import argparse
from pathlib import Path

import numpy as np

from timestep_curriculum.analysis import kl_curve, spearman, write_kl_csv
from timestep_curriculum.config import ExperimentConfig, load_config
from timestep_curriculum.data import make_dataset
from timestep_curriculum.schedule import build_schedule


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--dense", type=int, help="use this many log-spaced timesteps instead")
    p.add_argument("--M", type=int)
    p.add_argument("--both", action="store_true", help="also run the plain log-ratio average")
    p.add_argument("--out", default="runs/kl")
    args = p.parse_args()

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    a = cfg.analysis
    T = cfg.train.T
    ts = a.kl_timesteps
    if args.dense:
        ts = sorted({int(v) for v in np.geomspace(1, T - 1, args.dense).round()})
    M = args.M or a.M
    data = make_dataset(cfg.dataset)
    sched = build_schedule(cfg.train.schedule_kind, T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    estimators = ["control_variate", "log_ratio"] if args.both else [a.kl_estimator]
    for est in estimators:
        curve = kl_curve(ts, data, sched, M, a.L, seed=cfg.dataset.seed, estimator=est)
        write_kl_csv(out / f"kl_curve_{est}.csv", curve)
        rho = spearman([k.t for k in curve], [k.estimate for k in curve])
        print(f"{est}: spearman(t, KL) = {rho:.3f}")
        for k in curve:
            flag = "  unreliable" if k.unreliable else ""
            print(f"  t={k.t:>4}  {k.estimate: .3e} +- {k.stderr:.1e}{flag}")


if __name__ == "__main__":
    main()
