"""Discrete noise schedules and the forward corruption kernel.

Timesteps are integer indices ``0 .. T-1``; index 0 is the least noisy
marginal. ``alpha_bar[t]`` is the cumulative signal retention, so the
forward marginal at ``t`` is ``N(sqrt(alpha_bar[t]) x0, (1 - alpha_bar[t]) I)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LINEAR_BETA_RANGE = (1e-4, 0.02)
COSINE_OFFSET = 0.008
MAX_BETA = 0.999

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Beta / alpha-bar / SNR tables for a discrete diffusion process."""

    kind: str
    beta: np.ndarray
    alpha_bar: np.ndarray = field(init=False)
    snr: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2:
            raise ValueError("beta must be a 1-D table with at least 2 entries")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta entries must lie in (0, 1)")
        alpha_bar = np.cumprod(1.0 - beta)
        snr = alpha_bar / (1.0 - alpha_bar)
        for name, arr in (("beta", beta), ("alpha_bar", alpha_bar), ("snr", snr)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    def check_timestep(self, t) -> np.ndarray:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise TypeError(f"timesteps must be integers, got {t.dtype}")
        if np.any(t < 0) or np.any(t >= self.T):
            raise ValueError(f"timestep out of range [0, {self.T})")
        return t

    def rows(self):
        for t in range(self.T):
            yield t, float(self.beta[t]), float(self.alpha_bar[t]), float(self.snr[t])

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "beta", "alpha_bar", "snr"])
            for t, b, ab, s in self.rows():
                writer.writerow([t, repr(b), repr(ab), repr(s)])


def _cosine_alpha_bar(u: np.ndarray, s: float = COSINE_OFFSET) -> np.ndarray:
    f = np.cos((u + s) / (1.0 + s) * math.pi / 2.0) ** 2
    return f / math.cos(s / (1.0 + s) * math.pi / 2.0) ** 2


def build_schedule(kind: str = "linear", T: int = 1000) -> NoiseSchedule:
    """Build a linear or cosine schedule with ``T`` steps.

    The linear schedule spaces beta uniformly over ``[1e-4, 0.02]``. The
    cosine schedule derives beta from ratios of the continuous cosine
    alpha-bar curve (offset 0.008), clipped at 0.999.
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if kind == "linear":
        beta = np.linspace(*LINEAR_BETA_RANGE, T, dtype=np.float64)
    elif kind == "cosine":
        u = np.arange(T + 1, dtype=np.float64) / T
        ab = _cosine_alpha_bar(u)
        beta = 1.0 - ab[1:] / ab[:-1]
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    beta = np.minimum(beta, MAX_BETA)
    return NoiseSchedule(kind=kind, beta=beta)


def forward_sample(schedule: NoiseSchedule, x0, t, noise) -> np.ndarray:
    """Corrupt ``x0`` to timestep ``t`` using caller-supplied standard-normal ``noise``.

    Works on a single point (``x0`` of shape ``(d,)``, scalar ``t``) or a
    batch (``x0`` of shape ``(B, d)``, ``t`` of shape ``(B,)``).
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise ValueError(f"x0 shape {x0.shape} does not match noise shape {noise.shape}")
    t = schedule.check_timestep(t)
    ab = schedule.alpha_bar[t]
    if x0.ndim > 1:
        ab = np.reshape(ab, ab.shape + (1,) * (x0.ndim - ab.ndim))
    out = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    return out.astype(np.result_type(x0.dtype, noise.dtype), copy=False)


# Acklam's rational approximation to the standard-normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010258304e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _tail(q: float) -> float:
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_ppf(p: float) -> float:
    """Standard-normal quantile: Acklam's approximation plus one Halley step."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {p!r}")
    if p < _P_LOW:
        x = _tail(math.sqrt(-2.0 * math.log(p)))
    elif p > 1.0 - _P_LOW:
        x = -_tail(math.sqrt(-2.0 * math.log1p(-p)))
    else:
        q = p - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x = num / den
    # refine against the erfc-based CDF (raw approximation is only ~1e-9 relative)
    e = norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@dataclass(frozen=True)
class LogNormalNoiseDist:
    """Noise levels with ``log(sigma) ~ N(p_mean, p_std**2)``."""

    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self):
        if not self.p_std > 0:
            raise ValueError("p_std must be positive")

    def quantile(self, q: float) -> float:
        return self.p_mean + self.p_std * norm_ppf(q)

    def cdf(self, log_sigma: float) -> float:
        return norm_cdf((log_sigma - self.p_mean) / self.p_std)


def quantile(dist: LogNormalNoiseDist, q: float) -> float:
    """Value of ``log(sigma)`` at probability level ``q``."""
    return dist.quantile(q)
