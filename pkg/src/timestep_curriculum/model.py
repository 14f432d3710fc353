"""Fully-connected epsilon-prediction network with hand-written backprop.

The network input is the noisy point concatenated with a sinusoidal
embedding of the integer timestep. Parameters live in a flat list
``[W_1, b_1, W_2, b_2, ...]`` with ``W_k`` of shape ``(fan_in, fan_out)``,
so gradients, Adam moments and the EMA shadow are all lists congruent
to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .schedule import NoiseSchedule, forward_sample

ACTIVATIONS = ("relu", "silu")


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass or loss produces NaN/Inf."""


def embed_timestep(t, T: int, width: int) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t w_k)..., cos(t w_k)...]`` with ``w_k = 10000**(-2k/width)``.

    ``t`` may be a scalar (returns ``(width,)``) or an integer array
    (returns ``(len(t), width)``).
    """
    if width <= 0 or width % 2:
        raise ValueError(f"embedding width must be a positive even integer, got {width}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= T):
        raise ValueError(f"timestep out of range [0, {T})")
    k = np.arange(1, width // 2 + 1, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / width)
    phase = t_arr.astype(np.float64)[..., None] * omega
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    # silu written via tanh so large |z| never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    return z * s


def _act_grad(name, z):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    return s * (1.0 + z * (1.0 - s))


@dataclass
class Denoiser:
    data_dim: int
    hidden: tuple = (128, 128, 128)
    embed_width: int = 32
    activation: str = "silu"
    T: int = 1000
    params: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.embed_width <= 0 or self.embed_width % 2:
            raise ValueError("embed_width must be a positive even integer")
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.params:
            shapes = self.param_shapes()
            if [p.shape for p in self.params] != shapes:
                raise ValueError("parameter shapes do not match the layer widths")

    @property
    def dims(self) -> tuple:
        return (self.data_dim + self.embed_width, *self.hidden, self.data_dim)

    @property
    def dtype(self):
        return self.params[0].dtype

    def param_shapes(self) -> list:
        shapes = []
        for fan_in, fan_out in zip(self.dims, self.dims[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @classmethod
    def init(cls, data_dim: int, rng: np.random.Generator, hidden=(128, 128, 128),
             embed_width: int = 32, activation: str = "silu", T: int = 1000,
             dtype=np.float64) -> "Denoiser":
        net = cls(data_dim, hidden, embed_width, activation, T)
        params = []
        for fan_in, fan_out in zip(net.dims, net.dims[1:]):
            w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            params += [w.astype(dtype), np.zeros(fan_out, dtype=dtype)]
        net.params = params
        return net

    def copy(self, params: Optional[Sequence[np.ndarray]] = None) -> "Denoiser":
        src = self.params if params is None else params
        return Denoiser(self.data_dim, self.hidden, self.embed_width, self.activation,
                        self.T, [np.array(p, copy=True) for p in src])

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.data_dim:
            raise ValueError(f"expected points of dimension {self.data_dim}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite input to denoiser")
        t = np.broadcast_to(np.asarray(t), (x.shape[0],))
        emb = embed_timestep(t, self.T, self.embed_width).astype(self.dtype)
        return np.concatenate([x, emb], axis=1), single

    def forward(self, x, t, keep: bool = False):
        """Forward pass; with ``keep`` also return per-layer (input, pre-activation) pairs."""
        h, single = self._inputs(x, t)
        cache = []
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = h @ W + b
            if keep:
                cache.append((h, z))
            h = _act(self.activation, z) if k < n_layers - 1 else z
        if single:
            h = h[0]
        return (h, cache) if keep else h

    def backward(self, cache, grad_out) -> list:
        grads = [None] * len(self.params)
        g = grad_out
        n_layers = len(cache)
        for k in range(n_layers - 1, -1, -1):
            h, z = cache[k]
            if k < n_layers - 1:
                g = g * _act_grad(self.activation, z)
            grads[2 * k] = h.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = g @ self.params[2 * k].T
        return grads


def predict(model: Denoiser, x_t, t) -> np.ndarray:
    """Predicted noise for ``x_t`` at timestep(s) ``t``."""
    out = model.forward(x_t, t)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("denoiser produced non-finite output")
    return out


WeightFn = Callable[[np.ndarray], np.ndarray]


def unit_weight(t) -> np.ndarray:
    return np.ones(np.shape(t))


def min_snr_weight(schedule: NoiseSchedule, gamma: float = 5.0) -> WeightFn:
    """Loss weight ``min(snr, gamma) / snr`` for epsilon-prediction."""
    table = np.minimum(schedule.snr, gamma) / schedule.snr

    def weight(t):
        return table[np.asarray(t)]

    return weight


def make_weight_fn(name: str, schedule: NoiseSchedule, gamma: float = 5.0) -> WeightFn:
    if name in ("none", "unit", None):
        return unit_weight
    if name == "min_snr":
        return min_snr_weight(schedule, gamma)
    raise ValueError(f"unknown loss weighting {name!r}")


def loss_and_grads(model: Denoiser, schedule: NoiseSchedule, x0, t, noise,
                   weight_fn: Optional[WeightFn] = None):
    """Weighted noise-matching loss (batch mean) and its parameter gradients."""
    x0 = np.asarray(x0, dtype=model.dtype)
    noise = np.asarray(noise, dtype=model.dtype)
    t = np.asarray(t)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise ValueError("batch must be a nonempty (B, d) array")
    x_t = forward_sample(schedule, x0, t, noise)
    pred, cache = model.forward(x_t, t, keep=True)
    diff = pred - noise
    w = (weight_fn or unit_weight)(t).astype(model.dtype)
    per_sample = np.einsum("ij,ij->i", diff, diff)
    loss = float(np.mean(w * per_sample))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite training loss")
    grad_out = (2.0 / x0.shape[0]) * w[:, None] * diff
    return loss, model.backward(cache, grad_out)


@dataclass
class AdamState:
    """Bias-corrected Adam(W) state; ``weight_decay`` is decoupled."""

    m: list
    v: list
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0

    @classmethod
    def for_model(cls, model: Denoiser, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in model.params],
                   [np.zeros_like(p) for p in model.params], **kw)


def adam_step(model: Denoiser, opt: AdamState, grads) -> None:
    """In-place AdamW update of ``model.params``; increments ``opt.step``."""
    if len(grads) != len(model.params) or any(
            g.shape != p.shape for g, p in zip(grads, model.params)):
        raise ValueError("gradient shapes do not match parameters")
    b1, b2 = opt.betas
    opt.step += 1
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for p, g, m, v in zip(model.params, grads, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if opt.weight_decay:
            p -= opt.lr * opt.weight_decay * p
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    if not all(np.all(np.isfinite(p)) for p in model.params):
        raise NonFiniteError("non-finite parameters after optimizer step")


@dataclass
class EmaShadow:
    decay: float
    shadow: list

    @classmethod
    def for_model(cls, model: Denoiser, decay: float = 0.9999) -> "EmaShadow":
        if not 0.0 <= decay <= 1.0:
            raise ValueError("EMA decay must lie in [0, 1]")
        return cls(decay, [np.array(p, copy=True) for p in model.params])

    def as_model(self, like: Denoiser) -> Denoiser:
        return like.copy(self.shadow)


def ema_update(ema: EmaShadow, model: Denoiser) -> None:
    """``shadow <- decay * shadow + (1 - decay) * current``, in place."""
    if len(ema.shadow) != len(model.params) or any(
            s.shape != p.shape for s, p in zip(ema.shadow, model.params)):
        raise ValueError("EMA shadow shapes do not match model parameters")
    d = ema.decay
    for s, p in zip(ema.shadow, model.params):
        s *= d
        s += (1.0 - d) * p


def save_checkpoint(path, model: Denoiser, ema: Optional[EmaShadow] = None, **extra) -> None:
    """Write a JSON checkpoint: header fields, then row-major parameter arrays."""
    doc = {
        "data_dim": model.data_dim,
        "hidden": list(model.hidden),
        "embed_width": model.embed_width,
        "activation": model.activation,
        "T": model.T,
        "dtype": str(model.dtype),
        **extra,
        "params": [p.tolist() for p in model.params],
    }
    if ema is not None:
        doc["ema_decay"] = ema.decay
        doc["ema"] = [s.tolist() for s in ema.shadow]
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, ema_or_None, header)``."""
    doc = json.loads(Path(path).read_text())
    dtype = np.dtype(doc.get("dtype", "float64"))
    model = Denoiser(doc["data_dim"], tuple(doc["hidden"]), doc["embed_width"],
                     doc["activation"], doc["T"],
                     [np.asarray(p, dtype=dtype) for p in doc["params"]])
    ema = None
    if "ema" in doc:
        ema = EmaShadow(doc["ema_decay"], [np.asarray(s, dtype=dtype) for s in doc["ema"]])
    header = {k: v for k, v in doc.items() if k not in ("params", "ema")}
    return model, ema, header
