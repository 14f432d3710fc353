"""Easy-to-hard timestep curricula for diffusion training on toy data."""

from .clustering import (ClusterSet, quantile_clusters, sample_timestep, snr_clusters,
                         uniform_clusters)
from .model import Denoiser, adam_step, ema_update, embed_timestep, loss_and_grads, predict
from .sampling import SamplerConfig, ddpm_sample, hybrid_sample
from .schedule import LogNormalNoiseDist, NoiseSchedule, build_schedule, forward_sample, quantile
from .training import CurriculumState, TrainConfig, active_clusters, pacing_step, train

__version__ = "0.1.0"
