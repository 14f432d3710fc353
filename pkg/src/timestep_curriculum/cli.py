"""Command-line entry point: ``tcurric {train,compare,ablate,analyze,dataset}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .data import DATASET_KINDS, DatasetSpec, make_dataset


def _load(path, overrides) -> ExperimentConfig:
    cfg = load_config(path) if path else ExperimentConfig()
    return cfg.with_overrides(overrides or [])


def _common(p):
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set train.seed=3")
    p.add_argument("--out", help="output directory (overrides output_dir)")


def _apply_out(cfg, args):
    return replace(cfg, output_dir=args.out) if args.out else cfg


def cmd_train(args) -> int:
    cfg = _apply_out(_load(args.config, args.overrides), args)
    summary = ex.run_training(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    configs = [_load(p, args.overrides) for p in args.configs]
    rows = ex.compare(configs, workers=args.workers)
    if args.table:
        ex.write_rows(args.table, rows)
    print(f"{'strategy':<16} {'seed':>4} {'distance':>10} {'final_loss':>10}  run")
    for r in rows:
        print(f"{r['strategy']:<16} {r['seed']:>4} {r['distance']:>10.5f} "
              f"{r['final_loss']:>10.5f}  {r['run']}")
    return 0


def cmd_ablate(args) -> int:
    base = _apply_out(_load(args.config, args.overrides), args)
    if args.design:
        cells = ex.DESIGN_CELLS
    else:
        axes = {"n_clusters": args.n, "tau_max": args.tau, "cluster_mode": args.mode,
                "strategy": args.strategy, "weighting": args.weighting}
        cells = ex.grid_cells(**{k: v for k, v in axes.items() if v})
    rows = ex.ablate(base, cells, args.seeds, workers=args.workers)
    out = Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ex.write_rows(out / "grid.csv", rows)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells written to {out / 'grid.csv'} ({failed} failed)")
    return 0


def cmd_analyze(args) -> int:
    cfg = _apply_out(_load(args.config, args.overrides), args)
    verdict = ex.analyze_kl(cfg) if args.which == "kl" else ex.analyze_convergence(cfg)
    print(json.dumps(verdict, indent=2, sort_keys=True))
    return 1 if verdict["unreliable"] else 0


def cmd_dataset(args) -> int:
    if args.config:
        spec = _load(args.config, args.overrides).dataset
    else:
        spec = DatasetSpec(kind=args.kind, size=args.size, dim=args.dim, seed=args.seed)
    ex.write_points(args.output, make_dataset(spec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcurric", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run and write its artifacts")
    p.add_argument("config", nargs="?")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="rank finished (or freshly trained) runs by distance")
    p.add_argument("configs", nargs="+")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--table", help="write the ranked table as CSV")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="run a grid of curriculum settings")
    p.add_argument("config", nargs="?")
    _common(p)
    p.add_argument("--n", type=int, nargs="*", help="cluster counts")
    p.add_argument("--tau", type=int, nargs="*", help="maximum patience values")
    p.add_argument("--mode", nargs="*", choices=["uniform", "snr"])
    p.add_argument("--strategy", nargs="*",
                   choices=["vanilla", "curriculum", "naive_cl", "anti_curriculum"])
    p.add_argument("--weighting", nargs="*", choices=["none", "min_snr"])
    p.add_argument("--design", action="store_true",
                   help="vanilla / anti-curriculum / curriculum x uniform / snr rows")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="KL curve or per-interval convergence study")
    p.add_argument("config", nargs="?")
    p.add_argument("which", choices=["kl", "convergence"])
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("dataset", help="write a synthetic dataset as CSV")
    p.add_argument("output")
    p.add_argument("--config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--kind", choices=DATASET_KINDS, default="gmm")
    p.add_argument("--size", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
