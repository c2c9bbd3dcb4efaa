"""Distortion metrics: PSNR and SSIM, with the Y-channel (BT.601 luma)
variant conventional for deraining evaluation.

Inputs are numpy arrays; color images are (H, W, 3). SSIM uses the
standard parameters: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
K2 = 0.03. Color SSIM is the mean of per-channel scores.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be > 0")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) -
                         np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_2d(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    filt = lambda x: ndimage.convolve(x, win, mode="reflect")
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    smap = num / den
    pad = SSIM_WINDOW // 2  # drop the reflect-padded border
    return float(smap[pad:-pad, pad:-pad].mean())


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local SSIM; channels of a color image are scored and averaged."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        return _ssim_2d(a, b, data_range)
    return float(np.mean([_ssim_2d(a[..., c], b[..., c], data_range)
                          for c in range(a.shape[-1])]))


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 limited-range luma of an RGB image in [0, 1]."""
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0


@dataclass
class MetricReport:
    """Per-image and aggregate PSNR/SSIM scores."""

    channel_mode: str = "rgb"            # "rgb" or "y"
    names: list[str] = field(default_factory=list)
    psnr_db: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, name: str, restored: np.ndarray, reference: np.ndarray):
        if self.channel_mode == "y":
            restored, reference = rgb_to_y(restored), rgb_to_y(reference)
        elif self.channel_mode != "rgb":
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")
        self.names.append(name)
        self.psnr_db.append(psnr(restored, reference))
        self.ssim.append(ssim(restored, reference))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def write_csv(self, stream):
        w = csv.writer(stream)
        w.writerow(["filename", "psnr_db", "ssim"])
        for name, p, s in zip(self.names, self.psnr_db, self.ssim):
            w.writerow([name, f"{p:.4f}", f"{s:.6f}"])
        w.writerow(["mean", f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.6f}"])
