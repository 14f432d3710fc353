"""Experiment configuration: nested dataclasses that round-trip through JSON or TOML."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from .analysis import KL_ESTIMATORS
from .data import DatasetSpec
from .sampling import SamplerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    M: int = 5000
    L: Optional[int] = None
    kl_estimator: str = "control_variate"
    projections: int = 128
    eval_samples: int = 10_000
    kl_timesteps: tuple = (10, 50, 100, 200, 400, 600, 800, 999)
    convergence_intervals: int = 20
    convergence_iterations: int = 20_000
    eval_every: int = 100
    task_every: int = 0
    task_samples: int = 2000
    reference_checkpoint: Optional[str] = None

    def __post_init__(self):
        self.kl_timesteps = tuple(int(t) for t in self.kl_timesteps)
        if self.kl_estimator not in KL_ESTIMATORS:
            raise ValueError(f"unknown kl_estimator {self.kl_estimator!r}")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.sampler.steps > self.train.T:
            raise ConfigError(f"sampler.steps={self.sampler.steps} exceeds T={self.train.T}")

    def to_dict(self) -> dict:
        return _strip_none(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        kinds = {"dataset": DatasetSpec, "train": TrainConfig,
                 "sampler": SamplerConfig, "analysis": AnalysisConfig}
        unknown = set(doc) - set(kinds) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, kind in kinds.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a table")
            allowed = {f.name for f in dataclasses.fields(kind)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            try:
                parts[name] = kind(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid [{name}] section: {exc}") from exc
        return cls(**parts, output_dir=str(doc.get("output_dir", "runs/default")))

    def with_overrides(self, overrides) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        doc = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            *path, leaf = key.strip().split(".")
            node = doc
            for part in path:
                node = node.setdefault(part, {})
            node[leaf] = value
        return ExperimentConfig.from_dict(doc)

    def dumps(self, fmt: str = "json") -> str:
        if fmt == "toml":
            return tomli_w.dumps(self.to_dict())
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_strip_none(v) for v in obj]
    return obj


def _fmt(path: Path) -> str:
    return "toml" if path.suffix.lower() == ".toml" else "json"


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        if _fmt(path) == "toml":
            doc = tomli.loads(text)
        else:
            doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return ExperimentConfig.from_dict(doc)


def save_config(config: ExperimentConfig, path) -> None:
    path = Path(path)
    path.write_text(config.dumps(_fmt(path)))
