"""Building blocks of the denoiser: timestep encoder, timestep-conditioned
scale-shift (FiLM) residual block, and the bidirectional 2-D Mamba layer.

All blocks are residual around their learned branch, so zeroing the branch
tail reduces each to the exact identity.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..ssm.mamba import MambaBlock


def num_groups(channels: int) -> int:
    """GroupNorm group count: 8 when it divides, the channel count when
    channels < 8, else the largest divisor of channels not above 8."""
    if channels < 8:
        return channels
    g = 8
    while channels % g:
        g -= 1
    return g


class TimeEncoder(nn.Module):
    """Sinusoidal timestep embedding refined by a two-layer SiLU MLP."""

    def __init__(self, dim: int):
        super().__init__()
        if dim % 2:
            raise ValueError("time embedding dim must be even")
        self.dim = dim
        half = dim // 2
        # geometric frequency ladder from 1 down to 1/10000
        self.register_buffer(
            "freqs", torch.exp(-math.log(10000.0) *
                               torch.arange(half, dtype=torch.float32) / half))
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def sinusoidal(self, t) -> torch.Tensor:
        """Pre-MLP embedding: [cos(t f_i) | sin(t f_i)], shape (B, dim)."""
        t = torch.as_tensor(t, dtype=self.freqs.dtype, device=self.freqs.device)
        if t.ndim == 0:
            t = t.unsqueeze(0)
        ang = t.reshape(-1, 1) * self.freqs
        return torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1)

    def forward(self, t) -> torch.Tensor:
        emb = self.sinusoidal(t).to(self.fc1.weight.dtype)
        return self.fc2(F.silu(self.fc1(emb)))


class FiLMBlock(nn.Module):
    """Timestep-conditioned residual block.

    The embedding produces a channel-wise scale/shift applied to the input;
    the modulated map runs through projection, GroupNorm, SiLU, and a final
    1x1 convolution, then is added back to the input. Zeroed time weights
    give scale 1 / shift 0, so the branch sees the unmodulated input.
    """

    def __init__(self, channels: int, time_dim: int):
        super().__init__()
        self.channels = channels
        self.time_proj = nn.Linear(time_dim, 2 * channels)
        self.proj = nn.Conv2d(channels, channels, 1)
        self.norm = nn.GroupNorm(num_groups(channels), channels)
        self.out = nn.Conv2d(channels, channels, 1)

    def modulate(self, m: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
        scale, shift = self.time_proj(f_t).chunk(2, dim=-1)
        scale = scale.reshape(scale.shape[0], -1, 1, 1)
        shift = shift.reshape(shift.shape[0], -1, 1, 1)
        return (1 + scale) * m + shift

    def forward(self, m: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
        if m.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {m.shape[1]}")
        branch = self.out(F.silu(self.norm(self.proj(self.modulate(m, f_t)))))
        return m + branch


class BidirectionalMamba2D(nn.Module):
    """Token mixer over the flattened spatial grid.

    The feature map is flattened row-major to a length H*W sequence,
    LayerNorm-ed, run through one gated selective-SSM block in forward and
    reversed orientation (outputs summed), reshaped back, and added to the
    input.
    """

    def __init__(self, channels: int, d_state: int = 16,
                 scan_mode: str | None = None):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.mixer = MambaBlock(channels, d_state=d_state, scan_mode=scan_mode)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        b, c, h, w = f.shape
        tokens = f.flatten(2).transpose(1, 2)           # (B, H*W, C)
        u = self.norm(tokens)
        # both orientations in one batched mixer call
        y2 = self.mixer(torch.cat([u, u.flip(1)], dim=0))
        y = y2[:b] + y2[b:].flip(1)
        return y.transpose(1, 2).reshape(b, c, h, w) + f


class StateSpaceBlock(nn.Module):
    """Stage block: two serial FiLM blocks followed by the bidirectional
    Mamba layer. Each sub-block carries its own residual connection, so the
    whole block is an exact identity under zeroed branch weights. The same
    structure serves every stage; only the channel width changes.
    """

    def __init__(self, channels: int, time_dim: int, d_state: int = 16,
                 scan_mode: str | None = None):
        super().__init__()
        self.film1 = FiLMBlock(channels, time_dim)
        self.film2 = FiLMBlock(channels, time_dim)
        self.mamba = BidirectionalMamba2D(channels, d_state, scan_mode)

    def forward(self, f: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
        return self.mamba(self.film2(self.film1(f, f_t), f_t))
