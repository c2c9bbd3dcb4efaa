"""SSIR: conditional diffusion image restoration with state-space blocks.

A DDPM restoration engine whose denoiser and condition branch are built
from selective state-space (Mamba) blocks, plus the degradation, training,
and evaluation harness around it.
"""

from .diffusion import (DiffusionSample, NoiseSchedule, build_cosine_schedule,
                        convert_prediction, posterior_step, q_sample, q_step,
                        sample_loop)
from .network import ConditionalDenoiser, NetConfig, build_model, count_macs
from .train import TrainConfig, desk_preset, fit, paper_preset

__version__ = "0.1.0"

__all__ = [
    "NoiseSchedule", "DiffusionSample", "build_cosine_schedule", "q_step",
    "q_sample", "convert_prediction", "posterior_step", "sample_loop",
    "NetConfig", "ConditionalDenoiser", "build_model", "count_macs",
    "TrainConfig", "desk_preset", "paper_preset", "fit",
]
