"""Analytic multiply-accumulate counts for one denoiser forward pass.

Counting conventions (documented so the numbers are reproducible):

* convolution: H_out * W_out * k_h * k_w * C_in/groups * C_out
* linear map: rows * in_features * out_features (rows = tokens or batch-1)
* scan recurrence: one MAC per (token, channel, state) for the state
  update, plus the same for discretization products and the output mix
* elementwise product (gates, modulation): one MAC per element
* normalizations, activations, and exponentials are not counted

Counts are per single image (batch 1).
"""

from __future__ import annotations

from .config import NetConfig


def conv_macs(h: int, w: int, k: int, c_in: int, c_out: int,
              groups: int = 1) -> int:
    return h * w * k * k * (c_in // groups) * c_out


def _mamba_block_macs(length: int, d: int, n: int, expand: int = 2,
                      conv_width: int = 4) -> int:
    di = expand * d
    total = length * d * 2 * di          # input projection (both branches)
    total += length * di * conv_width    # depthwise causal conv
    total += length * di * di            # step-size projection
    total += 2 * length * di * n         # token-dependent B and C maps
    total += 3 * length * di * n         # per-token ZOH products (z, factor, bx)
    total += length * di * n             # recurrence h = a*h + bx
    total += length * di * n             # output mix C . h
    total += length * di                 # feedthrough D * x
    total += length * di                 # multiplicative gate
    total += length * di * d             # output projection
    return total


def _film_macs(h: int, w: int, c: int, cfg: NetConfig) -> int:
    total = cfg.time_dim * 2 * c         # time -> scale/shift
    total += h * w * c                   # modulation product
    total += 2 * conv_macs(h, w, 1, c, c)  # projection + branch output conv
    return total


def _stage_block_macs(h: int, w: int, c: int, cfg: NetConfig) -> int:
    """One stage block: two FiLM blocks + the bidirectional Mamba layer."""
    mamba = 2 * _mamba_block_macs(h * w, c, cfg.state_size)  # both orientations
    return 2 * _film_macs(h, w, c, cfg) + mamba


def count_macs(cfg: NetConfig, height: int, width: int):
    """Total MACs and a per-layer breakdown for one forward pass.

    Returns:
        (total, breakdown): breakdown is a list of (name, macs) pairs in
        execution order.
    """
    if height % 16 or width % 16:
        raise ValueError("spatial size must be divisible by 16")
    c = cfg.base_channels
    rows: list[tuple[str, int]] = []

    rows.append(("time_encoder.mlp", 2 * cfg.time_dim * cfg.time_dim))

    widths_in = [c, c, 2 * c, 3 * c]
    widths_out = [c, 2 * c, 3 * c, 4 * c]
    for branch in ("encoder", "cond_encoder"):
        rows.append((f"{branch}.stem",
                     conv_macs(height, width, 7, cfg.input_channels, c)))
        h, w = height, width
        for i in range(4):
            for b in range(cfg.stage_depths[i]):
                rows.append((f"{branch}.stage{i + 1}.block{b}",
                             _stage_block_macs(h, w, widths_in[i], cfg)))
            h, w = h // 2, w // 2
            rows.append((f"{branch}.stage{i + 1}.down",
                         conv_macs(h, w, 3, widths_in[i], widths_out[i])))

    for i in (4, 3, 2, 1):
        wid = i * c
        h, w = height // 2 ** i, width // 2 ** i
        rows.append((f"decoder.level{i}.fuse", conv_macs(h, w, 1, 3 * wid, wid)))
        for b in range(cfg.stage_depths[i - 1]):
            rows.append((f"decoder.level{i}.block{b}",
                         _stage_block_macs(h, w, wid, cfg)))
        rows.append((f"decoder.level{i}.up",
                     conv_macs(2 * h, 2 * w, 3, wid, max(i - 1, 1) * c)))

    rows.append(("decoder.level0.fuse",
                 conv_macs(height, width, 1, 3 * c, c)))
    for b in range(2):
        rows.append((f"decoder.level0.refine{b}",
                     _film_macs(height, width, c, cfg)))
    rows.append(("decoder.head",
                 conv_macs(height, width, 1, c, cfg.input_channels)))

    return sum(m for _, m in rows), rows
