from .gmm import GmmDenoiser, GmmPrior, gmm_predict_eps
from .sampling import (
    MODEL_RANGE,
    Denoiser,
    ddpm_sample,
    estimate_x0,
    guided_sample_step,
    posterior_mean,
    q_sample,
    sample_step,
    stream,
    unguided_sample,
)
from .schedule import NoiseSchedule, build_linear_schedule
from .tiny import TinyDenoiser, timestep_embedding, train_tiny_denoiser

__all__ = [
    "MODEL_RANGE",
    "Denoiser",
    "GmmDenoiser",
    "GmmPrior",
    "NoiseSchedule",
    "TinyDenoiser",
    "build_linear_schedule",
    "ddpm_sample",
    "estimate_x0",
    "gmm_predict_eps",
    "guided_sample_step",
    "posterior_mean",
    "q_sample",
    "sample_step",
    "stream",
    "timestep_embedding",
    "train_tiny_denoiser",
    "unguided_sample",
]
