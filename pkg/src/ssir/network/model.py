"""The conditional denoiser: pyramid encoder, condition branch, decoder.

The encoder turns the noisy state z_t into a 5-level feature pyramid
(widths C, C, 2C, 3C, 4C at scales 1, 1/2, 1/4, 1/8, 1/16). The condition
branch is an architecturally identical encoder with independent weights,
run on the degraded reference image. The decoder walks the pyramid coarse
to fine; at each level it concatenates its running feature with the
matching encoder and condition features, projects back to the level width,
refines with stage blocks, and upsamples. A zero-initialized 1x1 head maps
the full-resolution feature to the 3-channel prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import FiLMBlock, StateSpaceBlock, TimeEncoder
from .config import NetConfig


@dataclass
class FeaturePyramid:
    """Multi-scale feature set; level i lives at scale 1/2^i."""

    f0: torch.Tensor
    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor

    @property
    def levels(self) -> tuple[torch.Tensor, ...]:
        return (self.f0, self.f1, self.f2, self.f3, self.f4)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.levels[i]


def _check_spatial(x: torch.Tensor):
    if x.ndim != 4:
        raise ValueError(f"expected a (B, C, H, W) tensor, got {x.ndim} dims")
    if x.shape[-2] % 16 or x.shape[-1] % 16:
        raise ValueError(
            f"spatial size {x.shape[-2]}x{x.shape[-1]} must be divisible by 16")


class PyramidEncoder(nn.Module):
    """Feature extractor: 7x7 stem, then four (stage blocks -> stride-2
    downsample) stages. The timestep embedding modulates every stage block;
    the stem output is left unmodulated."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        c = cfg.base_channels
        self.stem = nn.Conv2d(cfg.input_channels, c, 7, padding=3)
        widths_in = [c, c, 2 * c, 3 * c]
        widths_out = [c, 2 * c, 3 * c, 4 * c]
        self.stages = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i in range(4):
            self.stages.append(nn.ModuleList([
                StateSpaceBlock(widths_in[i], cfg.time_dim, cfg.state_size)
                for _ in range(cfg.stage_depths[i])
            ]))
            self.downs.append(
                nn.Conv2d(widths_in[i], widths_out[i], 3, stride=2, padding=1))

    def forward(self, x: torch.Tensor, f_t: torch.Tensor) -> FeaturePyramid:
        _check_spatial(x)
        f = self.stem(x)
        feats = [f]
        for blocks, down in zip(self.stages, self.downs):
            for blk in blocks:
                f = blk(f, f_t)
            f = down(f)
            feats.append(f)
        return FeaturePyramid(*feats)


class Upsample(nn.Module):
    """Nearest-neighbor 2x followed by a 3x3 convolution."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(f, scale_factor=2, mode="nearest"))


class Decoder(nn.Module):
    """Coarse-to-fine reconstruction over the two feature pyramids.

    The running decoder feature starts as the encoder's coarsest level. At
    level i = 4..1 it is concatenated with the encoder and condition
    features of the same level (3 * iC channels), fused back to iC by a 1x1
    convolution, refined by the stage blocks, and upsampled to level i-1.
    The final stage at full resolution folds in the stem features of both
    branches and refines them with two timestep-conditioned scale-shift
    blocks (no token mixer at that level), so the prediction head has
    pixel-level access to its inputs gated by the timestep: the balance
    between reproducing the noisy state and painting condition content
    swings with the signal fraction.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        c = cfg.base_channels
        self.fuses = nn.ModuleList()
        self.stages = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in (4, 3, 2, 1):
            w = i * c
            self.fuses.append(nn.Conv2d(3 * w, w, 1))
            self.stages.append(nn.ModuleList([
                StateSpaceBlock(w, cfg.time_dim, cfg.state_size)
                for _ in range(cfg.stage_depths[i - 1])
            ]))
            self.ups.append(Upsample(w, max(i - 1, 1) * c))
        self.fuse0 = nn.Conv2d(3 * c, c, 1)
        self.refine0 = nn.ModuleList(
            [FiLMBlock(c, cfg.time_dim) for _ in range(2)])
        self.head = nn.Conv2d(c, cfg.input_channels, 1)
        self.head.zero_init = True

    def forward(self, enc: FeaturePyramid, ctrl: FeaturePyramid,
                f_t: torch.Tensor) -> torch.Tensor:
        f = enc.f4
        for step, i in enumerate((4, 3, 2, 1)):
            if f.shape != enc[i].shape or enc[i].shape != ctrl[i].shape:
                raise ValueError(f"pyramid mismatch at level {i}")
            f = self.fuses[step](torch.cat([f, enc[i], ctrl[i]], dim=1))
            for blk in self.stages[step]:
                f = blk(f, f_t)
            f = self.ups[step](f)
        if f.shape != enc.f0.shape or enc.f0.shape != ctrl.f0.shape:
            raise ValueError("pyramid mismatch at level 0")
        f = self.fuse0(torch.cat([f, enc.f0, ctrl.f0], dim=1))
        for blk in self.refine0:
            f = blk(f, f_t)
        return self.head(f)


class ConditionalDenoiser(nn.Module):
    """Full model: predicts the configured target from (z_t, t, condition)."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.time_encoder = TimeEncoder(cfg.time_dim)
        self.encoder = PyramidEncoder(cfg)
        self.cond_encoder = PyramidEncoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, z_t: torch.Tensor, t, cond: torch.Tensor) -> torch.Tensor:
        if z_t.shape[-2:] != cond.shape[-2:]:
            raise ValueError("state and condition must share spatial size")
        f_t = self.time_encoder(t)
        enc = self.encoder(z_t, f_t)
        ctrl = self.cond_encoder(cond, f_t)
        return self.decoder(enc, ctrl, f_t)


def init_weights(model: nn.Module, gen: torch.Generator | None = None):
    """Deterministic variance-scaling init.

    Conv/linear weights draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) using
    the supplied generator; their biases are zeroed unless the owning module
    marks them preserved (the step-size projection keeps its softplus-spread
    bias). Modules flagged zero_init (the prediction head) start at zero.
    """
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Linear)):
                if getattr(m, "zero_init", False):
                    m.weight.zero_()
                    if m.bias is not None:
                        m.bias.zero_()
                    continue
                bound = m.weight.shape[1:].numel() ** -0.5
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None and not getattr(m, "preserve_bias", False):
                    m.bias.zero_()
    return model


def build_model(cfg: NetConfig, seed: int = 0,
                dtype: torch.dtype = torch.float32) -> ConditionalDenoiser:
    """Seeded model construction; identical (cfg, seed) gives identical weights."""
    model = ConditionalDenoiser(cfg)
    gen = torch.Generator().manual_seed(seed)
    init_weights(model, gen)
    return model.to(dtype)
