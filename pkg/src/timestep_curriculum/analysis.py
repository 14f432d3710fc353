"""Task-difficulty measurements: KL between consecutive marginals, per-interval
convergence, and a sliced Wasserstein distance between sample sets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .clustering import uniform_clusters
from .model import Denoiser
from .sampling import SamplerConfig, hybrid_sample
from .schedule import NoiseSchedule
from .training import TrainConfig, train

# log of the smallest positive normal double; densities below this underflow to 0
LOG_TINY = math.log(np.finfo(np.float64).tiny)
UNRELIABLE_FRACTION = 0.1


class DensityUnderflowError(ArithmeticError):
    pass


def task_seed(seed: int, *task: int) -> int:
    return int(np.random.SeedSequence([seed, *task]).generate_state(1)[0])


def log_mixture_density(x, alpha_bar: float, centers, chunk: int = 512) -> np.ndarray:
    """log of ``mean_j N(x; sqrt(alpha_bar) y_j, (1 - alpha_bar) I)`` for each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    means = math.sqrt(alpha_bar) * np.asarray(centers, dtype=np.float64)
    var = 1.0 - alpha_bar
    if var <= 0:
        raise ValueError("alpha_bar must be < 1 for a proper density")
    d = x.shape[1]
    log_norm = -0.5 * d * math.log(2.0 * math.pi * var) - math.log(means.shape[0])
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], chunk):
        diff = x[lo:lo + chunk, None, :] - means[None, :, :]
        sq = np.einsum("mld,mld->ml", diff, diff)
        out[lo:lo + chunk] = logsumexp(-0.5 * sq / var, axis=1) + log_norm
    return out


def _centers(dataset, L: Optional[int], rng) -> np.ndarray:
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise ValueError("dataset is empty")
    if L is None:
        return data
    if L < 1:
        raise ValueError("L must be at least 1")
    return data[rng.integers(0, data.shape[0], size=L)]


def estimate_marginal_density(x, t: int, dataset, schedule: NoiseSchedule,
                              L: Optional[int] = None, rng=None) -> float:
    """Monte-Carlo estimate of the forward marginal density ``p_t(x)``.

    ``L=None`` uses every dataset point (the exact empirical mixture).
    """
    rng = rng if rng is not None else np.random.default_rng()
    t = int(schedule.check_timestep(t))
    logp = float(log_mixture_density(np.atleast_1d(x)[None, :], schedule.alpha_bar[t],
                                     _centers(dataset, L, rng))[0])
    p = math.exp(logp)
    if p == 0.0:
        raise DensityUnderflowError(f"density at timestep {t} underflows (log p = {logp:.1f})")
    return p


@dataclass
class KlEstimate:
    t: int
    estimate: float
    stderr: float
    degenerate_count: int
    n_terms: int

    @property
    def unreliable(self) -> bool:
        return self.degenerate_count > UNRELIABLE_FRACTION * (self.n_terms + self.degenerate_count)


KL_ESTIMATORS = ("control_variate", "log_ratio")


def estimate_kl_between(alpha_bar_prev: float, alpha_bar_cur: float, dataset, M: int,
                        L: Optional[int], rng, estimator: str = "control_variate") -> tuple:
    """Monte-Carlo ``KL(p_prev || p_cur)`` from ``M`` draws ``x ~ p_prev``.

    ``log_ratio`` averages ``g = log p_prev(x) - log p_cur(x)``. The default
    ``control_variate`` averages ``(r - 1) - log r`` with ``r = p_cur / p_prev``,
    i.e. adds the zero-mean term ``r - 1``; it has the same expectation but
    its spread shrinks with the square of the gap between the marginals,
    which matters because consecutive marginals are very close.

    Returns ``(estimate, stderr, degenerate_count, n_terms)``; terms whose
    ``p_cur`` density underflows to zero are counted and dropped.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if estimator not in KL_ESTIMATORS:
        raise ValueError(f"unknown KL estimator {estimator!r}; expected one of {KL_ESTIMATORS}")
    data = _centers(dataset, None, rng)
    y = data[rng.integers(0, data.shape[0], size=M)]
    x = math.sqrt(alpha_bar_prev) * y + math.sqrt(1.0 - alpha_bar_prev) * rng.standard_normal(y.shape)
    centers = _centers(dataset, L, rng)
    log_prev = log_mixture_density(x, alpha_bar_prev, centers)
    log_cur = log_mixture_density(x, alpha_bar_cur, centers)
    ok = np.isfinite(log_prev) & np.isfinite(log_cur) & (log_cur >= LOG_TINY)
    g = (log_prev - log_cur)[ok]
    terms = np.expm1(-g) + g if estimator == "control_variate" else g
    n = terms.size
    if n == 0:
        return math.nan, math.nan, int(M), 0
    stderr = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return float(terms.mean()), stderr, int(M - n), int(n)


def estimate_kl(t: int, dataset, schedule: NoiseSchedule, M: int = 5000,
                L: Optional[int] = None, rng=None,
                estimator: str = "control_variate") -> KlEstimate:
    """Estimate ``KL(p_{t-1} || p_t)`` between consecutive forward marginals."""
    if t < 1:
        raise ValueError("KL needs t >= 1")
    schedule.check_timestep(t)
    rng = rng if rng is not None else np.random.default_rng()
    est, se, bad, n = estimate_kl_between(schedule.alpha_bar[t - 1], schedule.alpha_bar[t],
                                          dataset, M, L, rng, estimator)
    return KlEstimate(int(t), est, se, bad, n)


def kl_curve(timesteps: Sequence[int], dataset, schedule: NoiseSchedule, M: int = 5000,
             L: Optional[int] = None, seed: int = 0,
             estimator: str = "control_variate") -> list:
    return [estimate_kl(t, dataset, schedule, M, L, np.random.default_rng(task_seed(seed, t)),
                        estimator)
            for t in timesteps]


def write_kl_csv(path, curve: Sequence[KlEstimate]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "estimate", "stderr", "degenerate_count"])
        for k in curve:
            writer.writerow([k.t, repr(k.estimate), repr(k.stderr), k.degenerate_count])


def spearman(x, y) -> float:
    """Spearman rank correlation; NaN when either input is constant."""
    if np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return math.nan
    return float(stats.spearmanr(x, y).statistic)


def _w2_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """1-D W2 between empirical measures given sorted samples (column-wise)."""
    na, nb = a.shape[0], b.shape[0]
    if na == nb:
        return np.sqrt(np.mean((a - b) ** 2, axis=0))
    levels = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    widths = np.diff(levels, prepend=0.0)
    mid = levels - 0.5 * widths
    ia = np.minimum((mid * na).astype(np.int64), na - 1)
    ib = np.minimum((mid * nb).astype(np.int64), nb - 1)
    return np.sqrt(np.einsum("k,kp->p", widths, (a[ia] - b[ib]) ** 2))


def distribution_distance(samples_a, samples_b, projections: int = 128, seed: int = 0) -> float:
    """Sliced Wasserstein-2: mean over random unit directions of the projected 1-D W2."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    dirs = np.random.default_rng(seed).standard_normal((a.shape[1], projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(a @ dirs, axis=0)
    pb = np.sort(b @ dirs, axis=0)
    return float(np.mean(_w2_sorted(pa, pb)))


def normalize_minmax(traj) -> np.ndarray:
    traj = np.asarray(traj, dtype=np.float64)
    span = traj.max() - traj.min()
    if span == 0:
        return np.zeros_like(traj)
    return (traj - traj.min()) / span


def convergence_iteration(iterations, norm_loss, threshold: float = 0.1) -> int:
    """Last logged iteration at which the normalized loss is above ``threshold``."""
    above = np.flatnonzero(np.asarray(norm_loss) > threshold)
    return int(iterations[above[-1]]) if above.size else int(iterations[0])


@dataclass
class ConvergenceStudy:
    intervals: list
    iterations: list
    raw_loss: np.ndarray            # (n_intervals, n_checkpoints)
    task_metric: np.ndarray         # NaN where not evaluated
    threshold: float = 0.1
    norm_loss: np.ndarray = field(init=False)
    convergence: list = field(init=False)

    def __post_init__(self):
        self.norm_loss = np.stack([normalize_minmax(r) for r in self.raw_loss])
        self.convergence = [convergence_iteration(self.iterations, r, self.threshold)
                            for r in self.norm_loss]

    @property
    def spearman(self) -> float:
        return spearman(np.arange(1, len(self.intervals) + 1), self.convergence)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["interval", "iteration", "raw_loss", "norm_loss", "task_metric"])
            for i in range(len(self.intervals)):
                for j, it in enumerate(self.iterations):
                    tm = self.task_metric[i, j]
                    writer.writerow([i + 1, it, repr(float(self.raw_loss[i, j])),
                                     repr(float(self.norm_loss[i, j])),
                                     "" if np.isnan(tm) else repr(float(tm))])


def run_convergence_study(dataset, schedule: NoiseSchedule, intervals: int = 20,
                          iterations: int = 20_000, eval_every: int = 100, seed: int = 0,
                          base_config: Optional[TrainConfig] = None,
                          reference_model: Optional[Denoiser] = None,
                          reference_samples=None, task_every: int = 0,
                          sampler: Optional[SamplerConfig] = None,
                          task_count: int = 2000, projections: int = 128) -> ConvergenceStudy:
    """Train one model per uniform timestep interval and log its convergence.

    Every ``eval_every`` iterations the mean raw loss over the block is
    recorded. When ``task_every > 0`` the task metric (sliced W2 of hybrid
    samples against ``reference_samples``) is computed on every
    ``task_every``-th checkpoint; that needs ``reference_model``.
    """
    if task_every and (reference_model is None or reference_samples is None):
        raise ValueError("task metric needs a reference model and reference samples")
    base = base_config or TrainConfig()
    sampler = sampler or SamplerConfig(steps=100)
    clusters = uniform_clusters(schedule.T, intervals)
    n_ckpt = iterations // eval_every
    raw = np.zeros((intervals, n_ckpt))
    task = np.full((intervals, n_ckpt), np.nan)
    ckpt_iters = [(j + 1) * eval_every for j in range(n_ckpt)]

    for i in range(1, intervals + 1):
        lo, hi = clusters.interval(i)
        cfg = replace(base, strategy="vanilla", total_iterations=n_ckpt * eval_every,
                      seed=task_seed(seed, i))
        block = []

        def on_step(it, model, ema, runlog, i=i, lo=lo, hi=hi, block=block):
            block.append(runlog.records[-1].loss)
            if (it + 1) % eval_every:
                return
            j = (it + 1) // eval_every - 1
            raw[i - 1, j] = np.mean(block)
            block.clear()
            if task_every and (j + 1) % task_every == 0:
                interval_model = ema.as_model(model) if sampler.use_ema else model
                samples = hybrid_sample(interval_model, (lo, hi), reference_model, schedule,
                                        sampler, task_count)
                task[i - 1, j] = distribution_distance(samples, reference_samples, projections)

        try:
            train(cfg, dataset, schedule, interval=(lo, hi), callback=on_step)
        except Exception as exc:
            raise RuntimeError(f"convergence study failed on interval {i}") from exc
    spans = [clusters.interval(i) for i in range(1, intervals + 1)]
    return ConvergenceStudy(spans, ckpt_iters, raw, task)
