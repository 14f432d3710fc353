#!/usr/bin/env python3
"""Per-interval convergence study: 20 models, each trained on one timestep interval.

A vanilla reference model (same budget) is trained first unless the config
names one; with --task-every it denoises outside each interval when hybrid
samples are scored.

Usage:
    python scripts/run_convergence.py
    python scripts/run_convergence.py --iterations 5000 --task-every 10
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from timestep_curriculum import experiments as ex
from timestep_curriculum.config import ExperimentConfig, load_config


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--iterations", type=int)
    p.add_argument("--task-every", type=int, default=0)
    p.add_argument("--out", default="runs/convergence")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    analysis = replace(cfg.analysis, task_every=args.task_every)
    if args.iterations:
        analysis = replace(analysis, convergence_iterations=args.iterations)
    if not analysis.reference_checkpoint:
        ref = replace(cfg, train=replace(cfg.train, strategy="vanilla"),
                      output_dir=str(Path(args.out) / "reference"))
        ex.run_training(ref, reuse=True)
        analysis = replace(analysis, reference_checkpoint=str(Path(ref.output_dir) / "model.json"))
    cfg = replace(cfg, analysis=analysis, output_dir=args.out)
    print(json.dumps(ex.analyze_convergence(cfg), indent=2))


if __name__ == "__main__":
    main()
