"""State-space scan kernels: ZOH discretization, LTI and selective scans,
and the gated Mamba block used by the restoration network."""

from .backend import HAS_COMPILED, available_impls, linear_recurrence
from .mamba import MambaBlock, default_scan_mode
from .params import (DiscreteSSM, SelectiveParams, SSMParams, zoh_bbar_factor,
                     zoh_discretize)
from .scan import (selective_discretize, selective_scan, ssm_kernel,
                   ssm_scan_convolutional, ssm_scan_sequential)

__all__ = [
    "HAS_COMPILED", "available_impls", "linear_recurrence",
    "MambaBlock", "default_scan_mode",
    "SSMParams", "DiscreteSSM", "SelectiveParams",
    "zoh_discretize", "zoh_bbar_factor",
    "ssm_scan_sequential", "ssm_kernel", "ssm_scan_convolutional",
    "selective_scan", "selective_discretize",
]
