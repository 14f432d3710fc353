"""Vanilla, curriculum, NaiveCL and anti-curriculum training loops.

Stage indices count down: a staged run starts at stage ``N`` (only the
easiest cluster active) and stage ``0`` means every timestep is active.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .clustering import ClusterSet, make_clusters, sample_timestep, uniform_clusters
from .model import (AdamState, Denoiser, EmaShadow, NonFiniteError, adam_step, ema_update,
                    loss_and_grads, make_weight_fn)
from .schedule import NoiseSchedule, build_schedule

log = logging.getLogger(__name__)

STRATEGIES = ("vanilla", "curriculum", "naive_cl", "anti_curriculum")


class TrainingError(RuntimeError):
    def __init__(self, msg, iteration, stage):
        super().__init__(f"{msg} (iteration {iteration}, stage {stage})")
        self.iteration = iteration
        self.stage = stage


@dataclass(frozen=True)
class CurriculumState:
    I_cur: int
    tau_max: int
    tau_cur: int = 0
    L_best: float = math.inf

    def __post_init__(self):
        if self.tau_max < 1:
            raise ValueError("tau_max must be positive")
        if not 0 <= self.tau_cur <= self.tau_max:
            raise ValueError(f"tau_cur={self.tau_cur} outside [0, {self.tau_max}]")
        if self.I_cur < 0:
            raise ValueError("stage index must be non-negative")


def pacing_step(L_cur: float, state: CurriculumState) -> CurriculumState:
    """Patience-based stage transition.

    An improving loss resets patience and becomes the new best. A
    non-improving loss either bumps patience or, once patience would
    exceed ``tau_max``, moves to the next stage with a fresh best loss.
    """
    if L_cur < state.L_best:
        return replace(state, tau_cur=0, L_best=L_cur)
    if state.tau_cur + 1 > state.tau_max:
        return replace(state, tau_cur=0, I_cur=state.I_cur - 1, L_best=math.inf)
    return replace(state, tau_cur=state.tau_cur + 1)


def active_clusters(strategy: str, I_cur: int, N: int) -> tuple:
    if not 0 <= I_cur <= N:
        raise ValueError(f"stage index {I_cur} outside 0..{N}")
    if I_cur == 0 or strategy == "vanilla":
        return tuple(range(1, N + 1))
    if strategy in ("curriculum", "naive_cl"):
        return tuple(range(I_cur, N + 1))
    if strategy == "anti_curriculum":
        return tuple(range(1, N - I_cur + 2))
    raise ValueError(f"unknown strategy {strategy!r}")


def smoothed_loss(losses, window: int = 50) -> float:
    """Mean of the last ``window`` raw losses."""
    tail = list(losses)[-window:]
    if not tail:
        raise ValueError("need at least one loss observation")
    return sum(tail) / len(tail)


class LossWindow:
    """Running mean over the last ``window`` losses."""

    def __init__(self, window: int = 50):
        if window < 1:
            raise ValueError("window must be positive")
        self.values = deque(maxlen=window)

    def push(self, value: float) -> float:
        self.values.append(value)
        return sum(self.values) / len(self.values)

    def clear(self):
        self.values.clear()


@dataclass
class TrainConfig:
    strategy: str = "curriculum"
    total_iterations: int = 30_000
    batch_size: int = 256
    n_clusters: int = 20
    tau_max: int = 200
    cluster_mode: str = "snr"
    schedule_kind: str = "linear"
    T: int = 1000
    seed: int = 0
    weighting: str = "none"
    min_snr_gamma: float = 5.0
    final_stage_iterations: Optional[int] = None
    smoothing_window: int = 50
    lr: float = 1e-4
    ema_decay: float = 0.999
    hidden: tuple = (128, 128, 128)
    embed_width: int = 32
    activation: str = "silu"
    dtype: str = "float32"
    checkpoint_every: int = 1000

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.total_iterations < 1 or self.batch_size < 1:
            raise ValueError("total_iterations and batch_size must be positive")
        if self.strategy != "vanilla":
            if self.n_clusters < 1 or self.n_clusters > self.T:
                raise ValueError(f"n_clusters must lie in 1..T, got {self.n_clusters}")
            if self.tau_max < 1:
                raise ValueError("tau_max must be positive")
        if self.strategy == "naive_cl" and self.naive_stage_length() < 1:
            raise ValueError("budget too small for one iteration per NaiveCL stage")

    def naive_stage_length(self) -> int:
        if self.final_stage_iterations is None:
            return self.total_iterations // (self.n_clusters + 1)
        return (self.total_iterations - self.final_stage_iterations) // self.n_clusters


@dataclass
class LogRecord:
    iteration: int
    stage: int
    active_size: int
    loss: float
    smoothed_loss: float
    wall_clock: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    COLUMNS = ("iteration", "stage", "active_size", "loss", "smoothed_loss")

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iterations must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def stages(self) -> list:
        return [r.stage for r in self.records]

    def transitions(self) -> list:
        """Iterations at which the stage index changed (first iteration of the new stage)."""
        out = []
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.stage != prev.stage:
                out.append(cur.iteration)
        return out

    def to_csv(self, path, wall_clock: bool = False) -> None:
        cols = self.COLUMNS + (("wall_clock",) if wall_clock else ())
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.records:
                row = [r.iteration, r.stage, r.active_size, repr(r.loss), repr(r.smoothed_loss)]
                if wall_clock:
                    row.append(f"{r.wall_clock:.3f}")
                writer.writerow(row)


@dataclass
class TrainResult:
    model: Denoiser
    ema: EmaShadow
    log: RunLog
    clusters: Optional[ClusterSet]
    schedule: NoiseSchedule

    @property
    def ema_model(self) -> Denoiser:
        return self.ema.as_model(self.model)


def train(config: TrainConfig, dataset, schedule: Optional[NoiseSchedule] = None,
          interval: Optional[tuple] = None,
          callback: Optional[Callable[[int, Denoiser, EmaShadow, RunLog], None]] = None,
          ) -> TrainResult:
    """Train a denoiser on ``dataset`` with the configured strategy.

    ``interval = (lo, hi)`` pins every batch to timesteps in ``[lo, hi)``
    (used for the per-interval convergence models) and implies vanilla
    pacing. ``callback(iteration, model, ema, log)`` runs after each step.
    """
    data = np.asarray(dataset, dtype=config.dtype)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a nonempty (n, d) array")
    schedule = schedule or build_schedule(config.schedule_kind, config.T)
    rng = np.random.default_rng(config.seed)
    model = Denoiser.init(data.shape[1], rng, config.hidden, config.embed_width,
                          config.activation, schedule.T, np.dtype(config.dtype))
    opt = AdamState.for_model(model, lr=config.lr)
    ema = EmaShadow.for_model(model, config.ema_decay)
    weight_fn = make_weight_fn(config.weighting, schedule, config.min_snr_gamma)

    strategy = config.strategy if interval is None else "vanilla"
    N = config.n_clusters
    clusters = None
    if interval is not None:
        lo, hi = interval
        if not 0 <= lo < hi <= schedule.T:
            raise ValueError(f"interval {interval} not inside [0, {schedule.T})")
    elif strategy == "naive_cl":
        clusters = uniform_clusters(schedule.T, N)
    elif strategy != "vanilla":
        clusters = make_clusters(config.cluster_mode, N, schedule)
        if not clusters.timestep_mode:
            raise ValueError("quantile clusters cover noise levels, not discrete timesteps")

    state = CurriculumState(I_cur=N if strategy in ("curriculum", "anti_curriculum") else 0,
                            tau_max=config.tau_max)
    naive_len = config.naive_stage_length() if strategy == "naive_cl" else 0
    window = LossWindow(config.smoothing_window)
    runlog = RunLog()
    start = time.perf_counter()
    n, B = data.shape[0], config.batch_size

    for it in range(config.total_iterations):
        if strategy == "naive_cl":
            stage = max(N - it // naive_len, 0)
        else:
            stage = state.I_cur
        if interval is not None:
            t = rng.integers(lo, hi, size=B)
            active_size = hi - lo
        elif strategy == "vanilla" or stage == 0:
            t = rng.integers(0, schedule.T, size=B)
            active_size = schedule.T
        else:
            active = active_clusters(strategy, stage, N)
            t = sample_timestep(clusters, active, rng, size=B)
            active_size = clusters.union_size(active)
        x0 = data[rng.integers(0, n, size=B)]
        noise = rng.standard_normal(x0.shape).astype(data.dtype)

        try:
            loss, grads = loss_and_grads(model, schedule, x0, t, noise, weight_fn)
            adam_step(model, opt, grads)
        except NonFiniteError as exc:
            raise TrainingError(str(exc), it, stage) from exc
        ema_update(ema, model)

        smooth = window.push(loss)
        runlog.append(LogRecord(it, stage, active_size, loss, smooth,
                                time.perf_counter() - start))
        if strategy in ("curriculum", "anti_curriculum") and state.I_cur > 0:
            state = pacing_step(smooth, state)
            if state.I_cur != stage:
                window.clear()
                log.debug("stage %d -> %d at iteration %d", stage, state.I_cur, it + 1)
        elif strategy == "naive_cl" and stage != max(N - (it + 1) // naive_len, 0):
            window.clear()
        if callback is not None:
            callback(it, model, ema, runlog)

    final_stage = runlog.records[-1].stage
    if final_stage != 0:
        msg = f"curriculum incomplete: budget exhausted in stage {final_stage} of {N}"
        runlog.warnings.append(msg)
        log.warning(msg)
    return TrainResult(model, ema, runlog, clusters, schedule)
