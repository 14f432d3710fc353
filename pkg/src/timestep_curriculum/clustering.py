"""Partitions of the timestep range (or log-noise-level axis) into curriculum clusters.

Clusters are numbered 1..N. Cluster ``i`` is the half-open interval
``[boundaries[i-1], boundaries[i])``; for timestep modes, cluster 1 holds
the least noisy (hardest) timesteps and cluster N the noisiest (easiest).
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .schedule import LogNormalNoiseDist, NoiseSchedule

CLUSTER_MODES = ("uniform", "snr", "quantile")
QUANTILE_TAIL = 1e-4


@dataclass(frozen=True)
class ClusterSet:
    mode: str
    boundaries: tuple

    def __post_init__(self):
        if self.mode not in CLUSTER_MODES:
            raise ValueError(f"unknown cluster mode {self.mode!r}")
        b = tuple(self.boundaries)
        if len(b) < 2:
            raise ValueError("need at least two boundaries")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")
        if self.timestep_mode:
            b = tuple(int(v) for v in b)
            if b[0] != 0:
                raise ValueError("first timestep boundary must be 0")
        else:
            b = tuple(float(v) for v in b)
        object.__setattr__(self, "boundaries", b)

    @property
    def timestep_mode(self) -> bool:
        return self.mode != "quantile"

    @property
    def N(self) -> int:
        return len(self.boundaries) - 1

    @property
    def T(self) -> Optional[int]:
        return self.boundaries[-1] if self.timestep_mode else None

    def interval(self, i: int) -> tuple:
        self._check_index(i)
        return self.boundaries[i - 1], self.boundaries[i]

    def size(self, i: int) -> int:
        lo, hi = self.interval(i)
        return hi - lo

    def _check_index(self, i: int) -> None:
        if not 1 <= i <= self.N:
            raise ValueError(f"cluster index {i} outside 1..{self.N}")

    def _check_active(self, active: Iterable[int]) -> list:
        idx = sorted(set(int(i) for i in active))
        if not idx:
            raise ValueError("active cluster set is empty")
        for i in idx:
            self._check_index(i)
        return idx

    def cluster_of(self, t) -> int:
        """Index of the cluster containing ``t``.

        Timestep modes reject ``t`` outside ``[0, T)``. In quantile mode
        the outer boundaries are tail truncations, so values beyond them
        belong to the first or last cluster.
        """
        if self.timestep_mode:
            if not 0 <= t < self.T:
                raise ValueError(f"timestep {t} outside [0, {self.T})")
        i = bisect.bisect_right(self.boundaries, t)
        return min(max(i, 1), self.N)

    def union_size(self, active: Iterable[int]) -> int:
        return sum(self.size(i) for i in self._check_active(active))

    def to_csv(self, path, schedule: Optional[NoiseSchedule] = None) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "l_i", "l_next", "mean_snr"])
            for i in range(1, self.N + 1):
                lo, hi = self.interval(i)
                mean_snr = ""
                if schedule is not None and self.timestep_mode:
                    mean_snr = repr(float(schedule.snr[lo:hi].mean()))
                writer.writerow([i, lo, hi, mean_snr])


def _check_n(N: int, T: Optional[int] = None) -> None:
    if N < 1:
        raise ValueError(f"need at least one cluster, got N={N}")
    if T is not None and N > T:
        raise ValueError(f"cannot split {T} timesteps into {N} nonempty clusters")


def uniform_clusters(T: int, N: int) -> ClusterSet:
    _check_n(N, T)
    bounds = [(i * T) // N for i in range(N + 1)]
    return ClusterSet("uniform", tuple(bounds))


def snr_clusters(schedule: NoiseSchedule, N: int) -> ClusterSet:
    """Clusters spanning equal ranges of log-SNR.

    Boundary ``l_i`` is the first timestep whose log-SNR has dropped by
    ``(i-1)/N`` of the total log-SNR range. Collapsed (empty) clusters are
    pushed apart so every cluster keeps at least one timestep.
    """
    T = schedule.T
    _check_n(N, T)
    log_snr = np.log(schedule.snr)
    if np.any(np.diff(log_snr) >= 0):
        raise ValueError("schedule SNR must be strictly decreasing")
    top, bottom = log_snr[0], log_snr[-1]
    targets = top - np.arange(1, N) * (top - bottom) / N
    # searchsorted needs ascending keys, so work on -log_snr
    inner = np.searchsorted(-log_snr, -targets, side="left")
    bounds = [0, *(int(b) for b in inner), T]
    for i in range(1, N):
        bounds[i] = max(bounds[i], bounds[i - 1] + 1)
    for i in range(N - 1, 0, -1):
        bounds[i] = min(bounds[i], bounds[i + 1] - 1)
    return ClusterSet("snr", tuple(bounds))


def quantile_clusters(dist: LogNormalNoiseDist, N: int, tail: float = QUANTILE_TAIL) -> ClusterSet:
    """Equal-probability clusters of ``log(sigma)`` under a log-normal noise law."""
    _check_n(N)
    levels = [tail, *(i / N for i in range(1, N)), 1.0 - tail]
    return ClusterSet("quantile", tuple(dist.quantile(q) for q in levels))


def make_clusters(mode: str, N: int, schedule: NoiseSchedule,
                  dist: Optional[LogNormalNoiseDist] = None) -> ClusterSet:
    if mode == "uniform":
        return uniform_clusters(schedule.T, N)
    if mode == "snr":
        return snr_clusters(schedule, N)
    if mode == "quantile":
        return quantile_clusters(dist or LogNormalNoiseDist(), N)
    raise ValueError(f"unknown cluster mode {mode!r}")


def sample_timestep(clusters: ClusterSet, active: Iterable[int], rng: np.random.Generator,
                    size=None):
    """Draw timesteps uniformly from the union of the ``active`` clusters."""
    if not clusters.timestep_mode:
        raise ValueError("sample_timestep needs a timestep-mode ClusterSet")
    idx = clusters._check_active(active)
    lows = np.array([clusters.boundaries[i - 1] for i in idx], dtype=np.int64)
    sizes = np.array([clusters.size(i) for i in idx], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    u = rng.integers(0, offsets[-1], size=size)
    k = np.searchsorted(offsets, u, side="right") - 1
    t = lows[k] + (u - offsets[k])
    return int(t) if size is None else t


def sample_log_sigma(clusters: ClusterSet, dist: LogNormalNoiseDist, active: Iterable[int],
                     rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``log(sigma)`` from the noise law restricted to the active quantile clusters."""
    if clusters.timestep_mode:
        raise ValueError("sample_log_sigma needs a quantile-mode ClusterSet")
    idx = clusters._check_active(active)
    N = clusters.N
    which = rng.choice(np.asarray(idx), size=size)
    u = rng.uniform(size=size)
    lo = np.maximum((which - 1) / N, QUANTILE_TAIL)
    hi = np.minimum(which / N, 1.0 - QUANTILE_TAIL)
    levels = lo + u * (hi - lo)
    return np.array([dist.quantile(float(q)) for q in levels])
