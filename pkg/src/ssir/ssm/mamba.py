"""Gated selective-SSM token mixer.

Structure: input projection to an expanded width (two branches), short
causal depthwise convolution + SiLU on the scan branch, selective scan,
multiplicative SiLU gate from the second branch, projection back down.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .backend import HAS_COMPILED
from .params import SelectiveParams
from .scan import selective_scan

DT_MIN, DT_MAX = 1e-3, 0.1


def default_scan_mode() -> str:
    """Fastest scan route in this process: compiled sequential kernel when
    the extension built, otherwise the blocked parallel scan."""
    return "sequential" if HAS_COMPILED else "parallel"


class MambaBlock(nn.Module):
    """Selective state-space block over token sequences (B, L, d).

    Args:
        d_model: token width d.
        d_state: state entries per channel (N).
        expand: inner width multiplier (d_inner = expand * d_model).
        conv_width: depthwise causal conv kernel size.
        scan_mode: "sequential", "parallel", or None for the process default.
    """

    def __init__(self, d_model: int, d_state: int = 16, expand: int = 2,
                 conv_width: int = 4, scan_mode: str | None = None):
        super().__init__()
        self.d_model = d_model
        self.d_state = d_state
        self.d_inner = expand * d_model
        self.conv_width = conv_width
        self.scan_mode = scan_mode

        self.in_proj = nn.Linear(d_model, 2 * self.d_inner, bias=False)
        self.conv = nn.Conv1d(self.d_inner, self.d_inner, conv_width,
                              groups=self.d_inner, bias=True)
        self.dt_proj = nn.Linear(self.d_inner, self.d_inner, bias=True)
        self.B_proj = nn.Linear(self.d_inner, d_state, bias=False)
        self.C_proj = nn.Linear(self.d_inner, d_state, bias=False)
        self.out_proj = nn.Linear(self.d_inner, d_model, bias=False)

        # state matrix: real negative diagonal, column n starts at -(n+1)
        a_init = -torch.arange(1, d_state + 1, dtype=torch.float32)
        self.A = nn.Parameter(a_init.repeat(self.d_inner, 1))
        self.D = nn.Parameter(torch.ones(self.d_inner))
        # spread the initial step sizes over [DT_MIN, DT_MAX] via the
        # softplus inverse; deterministic so seeding stays with the linears
        dt = torch.exp(torch.linspace(math.log(DT_MIN), math.log(DT_MAX),
                                      self.d_inner))
        with torch.no_grad():
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))
        self.dt_proj.preserve_bias = True  # keep the spread under re-init

    def selective_params(self) -> SelectiveParams:
        """View of this block's weights as a selective-scan record."""
        return SelectiveParams(A=self.A, w_dt=self.dt_proj.weight,
                               b_dt=self.dt_proj.bias, w_B=self.B_proj.weight,
                               w_C=self.C_proj.weight, D=self.D)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.d_model:
            raise ValueError(
                f"token dim {x.shape[-1]} does not match d_model {self.d_model}")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        u, z = self.in_proj(x).chunk(2, dim=-1)
        # causal depthwise conv over the sequence axis
        u = F.pad(u.transpose(1, 2), (self.conv_width - 1, 0))
        u = self.conv(u).transpose(1, 2)
        u = F.silu(u)
        mode = self.scan_mode or default_scan_mode()
        y = selective_scan(u, self.selective_params(), mode=mode)
        y = y * F.silu(z)
        y = self.out_proj(y)
        return y[0] if squeeze else y
