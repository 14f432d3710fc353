"""Run-level orchestration shared by the CLI and the scripts.

Every run lives in its own directory holding the config snapshot,
``runlog.csv``, ``model.json`` (final weights plus EMA shadow), a rolling
``checkpoint.json``, ``samples.csv`` and ``summary.json``.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .analysis import (distribution_distance, kl_curve, run_convergence_study, spearman,
                       write_kl_csv)
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .data import make_dataset
from .model import load_checkpoint, save_checkpoint
from .sampling import ddpm_sample, sampling_model
from .schedule import build_schedule
from .training import train

log = logging.getLogger(__name__)


def _finite_or_none(value):
    return None if value is None or math.isnan(value) else value


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_points(path, points) -> None:
    points = np.asarray(points)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{k}" for k in range(points.shape[1])])
        writer.writerows([[repr(float(v)) for v in row] for row in points])


def read_points(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def load_summary(config: ExperimentConfig) -> Optional[dict]:
    """Summary of a finished run whose snapshot matches ``config``, else None."""
    out = Path(config.output_dir)
    summary, snap = out / "summary.json", out / "config.json"
    if summary.exists() and snap.exists() and snap.read_text() == config.dumps():
        return json.loads(summary.read_text())
    return None


def run_training(config: ExperimentConfig, reuse: bool = False) -> dict:
    """Train, sample and score one run; returns the summary dict."""
    if reuse:
        done = load_summary(config)
        if done is not None:
            return done
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").unlink(missing_ok=True)
    (out / "config.json").write_text(config.dumps())

    tc = config.train
    data = make_dataset(config.dataset)
    schedule = build_schedule(tc.schedule_kind, tc.T)

    def checkpoint(it, model, ema, runlog):
        if tc.checkpoint_every and (it + 1) % tc.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.json", model, ema, iteration=it + 1)

    started = time.perf_counter()
    res = train(tc, data, schedule, callback=checkpoint)
    train_seconds = time.perf_counter() - started
    res.log.to_csv(out / "runlog.csv")
    save_checkpoint(out / "model.json", res.model, res.ema, iteration=tc.total_iterations)

    n_eval = config.analysis.eval_samples
    samples = ddpm_sample(sampling_model(res.model, res.ema, config.sampler), schedule,
                          config.sampler, n_eval)
    write_points(out / "samples.csv", samples)
    reference = make_dataset(config.dataset.reference(n_eval))
    distance = distribution_distance(samples, reference, config.analysis.projections)

    last = res.log.records[-1]
    summary = {
        "strategy": tc.strategy,
        "seed": tc.seed,
        "total_iterations": tc.total_iterations,
        "optimizer_steps": len(res.log),
        "final_loss": last.loss,
        "final_smoothed_loss": last.smoothed_loss,
        "transitions": res.log.transitions(),
        "curriculum_complete": last.stage == 0,
        "warnings": res.log.warnings,
        "distance": distance,
        "eval_samples": n_eval,
        "train_seconds": round(train_seconds, 1),
    }
    _write_json(out / "summary.json", summary)
    return summary


def _run_one(config_dict: dict) -> dict:
    cfg = ExperimentConfig.from_dict(config_dict)
    return run_training(cfg, reuse=True)


def run_many(configs: Sequence[ExperimentConfig], workers: int = 1) -> list:
    """Run (or reuse) each config; failures come back as ``{"error": ...}`` dicts."""
    results = [None] * len(configs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_one, c.to_dict()) for c in configs]
            for k, fut in enumerate(futs):
                try:
                    results[k] = fut.result()
                except Exception as exc:  # recorded per cell, grid continues
                    results[k] = {"error": f"{type(exc).__name__}: {exc}"}
        return results
    for k, c in enumerate(configs):
        try:
            results[k] = run_training(c, reuse=True)
        except Exception as exc:
            log.exception("run %s failed", c.output_dir)
            results[k] = {"error": f"{type(exc).__name__}: {exc}"}
    return results


def compare(configs: Sequence[ExperimentConfig], workers: int = 1) -> list:
    """Ranked table (ascending distance) of runs sharing dataset and budget."""
    if len(configs) < 2:
        raise ConfigError("compare needs at least two runs")
    first = configs[0]
    for c in configs[1:]:
        if c.dataset != first.dataset:
            raise ConfigError(f"dataset spec of {c.output_dir} differs from {first.output_dir}")
        if (c.train.total_iterations, c.train.batch_size) != (
                first.train.total_iterations, first.train.batch_size):
            raise ConfigError(f"budget of {c.output_dir} differs from {first.output_dir}")
    rows = []
    for c, s in zip(configs, run_many(configs, workers)):
        if "error" in s:
            raise RuntimeError(f"run {c.output_dir} failed: {s['error']}")
        rows.append({"run": c.output_dir, "strategy": c.train.strategy, "seed": c.train.seed,
                     "distance": s["distance"], "final_loss": s["final_smoothed_loss"]})
    steps = {s["optimizer_steps"] for s in (load_summary(c) for c in configs)}
    if len(steps) != 1:
        raise RuntimeError(f"optimizer step counts differ across runs: {sorted(steps)}")
    return sorted(rows, key=lambda r: r["distance"])


def write_rows(path, rows: Sequence[dict]) -> None:
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)


def grid_cells(**axes) -> list:
    """Cartesian product of train-config overrides, e.g. ``grid_cells(n_clusters=[5, 20])``."""
    keys = list(axes)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys))]


# Curriculum-design rows: vanilla, anti-curriculum and curriculum, each with uniform / SNR clusters.
DESIGN_CELLS = [
    {"strategy": "vanilla"},
    {"strategy": "anti_curriculum", "cluster_mode": "uniform"},
    {"strategy": "anti_curriculum", "cluster_mode": "snr"},
    {"strategy": "curriculum", "cluster_mode": "uniform"},
    {"strategy": "curriculum", "cluster_mode": "snr"},
]


def cell_name(cell: dict) -> str:
    return "_".join(f"{k}-{v}" for k, v in cell.items()) or "base"


def cell_config(base: ExperimentConfig, cell: dict, seed: int, root) -> ExperimentConfig:
    train_cfg = replace(base.train, **cell, seed=seed)
    out = Path(root) / cell_name(cell) / f"seed{seed}"
    return replace(base, train=train_cfg, sampler=replace(base.sampler, seed=seed),
                   output_dir=str(out))


def ablate(base: ExperimentConfig, cells: Sequence[dict], seeds: Iterable[int],
           root=None, workers: int = 1) -> list:
    """Run every (cell, seed) pair; one row per pair, failures recorded in ``status``."""
    if not cells:
        raise ConfigError("ablation grid is empty")
    root = Path(root or Path(base.output_dir) / "ablate")
    seeds = list(seeds)
    cells_seeds = [(cell, seed) for cell in cells for seed in seeds]
    outcome = {}
    valid = []
    for k, (cell, seed) in enumerate(cells_seeds):
        try:
            valid.append((k, cell_config(base, cell, seed, root)))
        except (TypeError, ValueError) as exc:
            outcome[k] = {"error": f"{type(exc).__name__}: {exc}"}
    for (k, _), s in zip(valid, run_many([c for _, c in valid], workers)):
        outcome[k] = s
    rows = []
    for k, (cell, seed) in enumerate(cells_seeds):
        s = outcome[k]
        row = {"strategy": base.train.strategy, "n_clusters": base.train.n_clusters,
               "tau_max": base.train.tau_max, "cluster_mode": base.train.cluster_mode,
               "weighting": base.train.weighting, **cell, "seed": seed}
        if "error" in s:
            row.update(status=s["error"], distance="", final_loss="", n_transitions="")
        else:
            row.update(status="ok", distance=s["distance"], final_loss=s["final_smoothed_loss"],
                       n_transitions=len(s["transitions"]))
        rows.append(row)
    return rows


def median_by_cell(rows: Sequence[dict], keys: Sequence[str]) -> dict:
    groups = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault(tuple(r[k] for k in keys), []).append(r["distance"])
    return {k: statistics.median(v) for k, v in groups.items()}


def analyze_kl(config: ExperimentConfig) -> dict:
    a = config.analysis
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = make_dataset(config.dataset)
    schedule = build_schedule(config.train.schedule_kind, config.train.T)
    curve = kl_curve(a.kl_timesteps, data, schedule, a.M, a.L, seed=config.dataset.seed,
                     estimator=a.kl_estimator)
    write_kl_csv(out / "kl_curve.csv", curve)
    verdict = {
        "which": "kl",
        "spearman": _finite_or_none(spearman([k.t for k in curve], [k.estimate for k in curve])),
        "timesteps": [k.t for k in curve],
        "unreliable": [k.t for k in curve if k.unreliable],
        "M": a.M,
        "estimator": a.kl_estimator,
        "L": a.L if a.L is not None else config.dataset.size,
    }
    _write_json(out / "kl_verdict.json", verdict)
    return verdict


def analyze_convergence(config: ExperimentConfig) -> dict:
    a = config.analysis
    out = Path(config.output_dir)
    ref_path = Path(a.reference_checkpoint) if a.reference_checkpoint else out / "model.json"
    if not ref_path.exists():
        raise FileNotFoundError(
            f"reference checkpoint {ref_path} not found; train a vanilla run first")
    ref_model, ref_ema, _ = load_checkpoint(ref_path)
    reference = sampling_model(ref_model, ref_ema, config.sampler)
    data = make_dataset(config.dataset)
    schedule = build_schedule(config.train.schedule_kind, config.train.T)
    study = run_convergence_study(
        data, schedule, a.convergence_intervals, a.convergence_iterations, a.eval_every,
        seed=config.train.seed, base_config=config.train, reference_model=reference,
        reference_samples=make_dataset(config.dataset.reference(a.task_samples)),
        task_every=a.task_every, sampler=config.sampler, task_count=a.task_samples,
        projections=a.projections)
    out.mkdir(parents=True, exist_ok=True)
    study.to_csv(out / "convergence.csv")
    verdict = {
        "which": "convergence",
        "spearman": _finite_or_none(study.spearman),
        "convergence_iterations": study.convergence,
        "first_vs_last": [study.convergence[0], study.convergence[-1]],
        "unreliable": [],
    }
    _write_json(out / "convergence_verdict.json", verdict)
    return verdict


__all__ = ["run_training", "run_many", "compare", "ablate", "grid_cells", "DESIGN_CELLS",
           "median_by_cell", "analyze_kl", "analyze_convergence", "write_rows",
           "load_config", "save_config", "write_points", "read_points"]
