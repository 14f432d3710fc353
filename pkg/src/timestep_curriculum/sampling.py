"""DDPM ancestral sampling, plain and hybrid (interval model + reference model)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import Denoiser, EmaShadow, NonFiniteError, predict
from .schedule import NoiseSchedule


class SamplingError(FloatingPointError):
    def __init__(self, t):
        super().__init__(f"non-finite sampler state at timestep {t}")
        self.t = t


@dataclass
class SamplerConfig:
    steps: int = 250
    use_ema: bool = True
    seed: int = 0
    chunk: int = 4096

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")


def sampling_model(model: Denoiser, ema: Optional[EmaShadow], config: SamplerConfig) -> Denoiser:
    if config.use_ema and ema is not None:
        return ema.as_model(model)
    return model


def sampling_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced timesteps from ``T-1`` down to ``0`` (just ``T-1`` when ``steps == 1``)."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in 1..{T}, got {steps}")
    if steps == 1:
        return np.array([T - 1])
    ts = np.unique(np.round(np.linspace(0, T - 1, steps)).astype(np.int64))
    return ts[::-1]


def _run_chain(pick: Callable[[int], Denoiser], schedule: NoiseSchedule, config: SamplerConfig,
               count: int, dim: int) -> np.ndarray:
    ts = sampling_timesteps(schedule.T, config.steps)
    ab = schedule.alpha_bar
    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal((count, dim))
    for k, t in enumerate(ts):
        ab_prev = ab[ts[k + 1]] if k + 1 < len(ts) else 1.0
        # respaced one-step coefficients; equal to beta_t / alpha_t when no step is skipped
        alpha_t = ab[t] / ab_prev
        beta_t = 1.0 - alpha_t
        model = pick(int(t))
        eps = np.empty_like(x)
        for lo in range(0, count, config.chunk):
            sl = slice(lo, lo + config.chunk)
            try:
                eps[sl] = predict(model, x[sl], np.full(x[sl].shape[0], t))
            except NonFiniteError as exc:
                raise SamplingError(int(t)) from exc
        x = (x - beta_t / np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(alpha_t)
        if k + 1 < len(ts):
            x = x + np.sqrt(beta_t) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise SamplingError(int(t))
    return x


def ddpm_sample(model: Denoiser, schedule: NoiseSchedule, config: SamplerConfig,
                count: int) -> np.ndarray:
    """Draw ``count`` points by ancestral sampling from ``x_T ~ N(0, I)``.

    Uses the large posterior variance ``sigma_t**2 = beta_t`` and no noise
    on the final step.
    """
    return _run_chain(lambda t: model, schedule, config, count, model.data_dim)


def hybrid_sample(interval_model: Denoiser, interval: tuple, reference_model: Denoiser,
                  schedule: NoiseSchedule, config: SamplerConfig, count: int) -> np.ndarray:
    """Like :func:`ddpm_sample`, but ``interval_model`` denoises inside ``[lo, hi)``."""
    lo, hi = interval
    if not 0 <= lo <= hi <= schedule.T:
        raise ValueError(f"interval {interval} not inside [0, {schedule.T}]")
    if interval_model.data_dim != reference_model.data_dim:
        raise ValueError("interval and reference models disagree on data dimension")
    return _run_chain(lambda t: interval_model if lo <= t < hi else reference_model,
                      schedule, config, count, reference_model.data_dim)
