"""Low-dimensional synthetic datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DATASET_KINDS = ("gmm", "swiss_roll", "checkerboard")


@dataclass
class DatasetSpec:
    kind: str = "gmm"
    size: int = 10_000
    dim: int = 2
    seed: int = 0
    k: int = 8
    radius: float = 4.0
    std: float = 0.3

    def reference(self, size: int = 10_000) -> "DatasetSpec":
        """Spec for a held-out sample of the same distribution."""
        return replace(self, size=size, seed=self.seed + 104_729)


def gmm_means(k: int, radius: float, dim: int) -> np.ndarray:
    angles = 2.0 * math.pi * np.arange(k) / k
    means = np.zeros((k, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def make_dataset(spec: DatasetSpec, return_labels: bool = False):
    """Deterministic point cloud for ``spec`` (shape ``(size, dim)``)."""
    if spec.size < 1:
        raise ValueError("dataset size must be at least 1")
    rng = np.random.default_rng(spec.seed)
    labels = None
    if spec.kind == "gmm":
        if spec.dim < 2:
            raise ValueError("gmm needs dim >= 2")
        labels = rng.integers(0, spec.k, size=spec.size)
        points = gmm_means(spec.k, spec.radius, spec.dim)[labels]
        points = points + spec.std * rng.standard_normal((spec.size, spec.dim))
    elif spec.kind == "swiss_roll":
        if spec.dim not in (2, 3):
            raise ValueError("swiss_roll supports dim 2 or 3")
        angle = 1.5 * math.pi * (1.0 + 2.0 * rng.uniform(size=spec.size))
        cols = [angle * np.cos(angle), angle * np.sin(angle)]
        if spec.dim == 3:
            cols.insert(1, 21.0 * rng.uniform(size=spec.size) - 10.5)
        points = np.stack(cols, axis=1) / 3.0
        points = points + spec.std * 0.1 * rng.standard_normal(points.shape)
    elif spec.kind == "checkerboard":
        if spec.dim != 2:
            raise ValueError("checkerboard is 2-D only")
        x1 = 4.0 * rng.uniform(size=spec.size) - 2.0
        x2 = rng.uniform(size=spec.size) - 2.0 * rng.integers(0, 2, size=spec.size)
        x2 = x2 + np.floor(x1) % 2
        points = 2.0 * np.stack([x1, x2], axis=1)
    else:
        raise ValueError(f"unknown dataset kind {spec.kind!r}; expected one of {DATASET_KINDS}")
    return (points, labels) if return_labels else points
