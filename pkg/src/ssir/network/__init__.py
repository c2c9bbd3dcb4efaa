"""Denoiser architecture: timestep encoder, FiLM/Mamba stage blocks,
pyramid encoder + condition branch, decoder, and MAC accounting."""

from .blocks import (BidirectionalMamba2D, FiLMBlock, StateSpaceBlock,
                     TimeEncoder, num_groups)
from .config import NetConfig
from .macs import conv_macs, count_macs
from .model import (ConditionalDenoiser, Decoder, FeaturePyramid,
                    PyramidEncoder, build_model, init_weights)

__all__ = [
    "NetConfig", "TimeEncoder", "FiLMBlock", "BidirectionalMamba2D",
    "StateSpaceBlock", "num_groups", "FeaturePyramid", "PyramidEncoder",
    "Decoder", "ConditionalDenoiser", "build_model", "init_weights",
    "count_macs", "conv_macs",
]
