"""Synthetic degradations producing paired clean/degraded images.

Images are float arrays in [0, 1], shape (H, W, 3) or (H, W). Noise sigma
is quoted on the 0-255 scale, the convention of the denoising benchmarks
this mirrors, and rescaled internally. Every stochastic degradation takes
an explicit numpy Generator so pairs regenerate bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

EVAL_SIGMAS = (15, 25, 50)

KINDS = ("gaussian_noise", "motion_blur", "rain_streaks")


@dataclass
class DegradationSpec:
    """Recipe for one degradation; records everything needed to replay it."""

    kind: str = "gaussian_noise"
    sigma: float = 25.0                  # gaussian noise std, 0-255 scale
    kernel_length: int = 9               # motion blur line length (odd)
    angle_degrees: float = 0.0           # blur / rain direction
    streak_count: int = 200
    streak_length: float = 12.0
    streak_intensity: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        return cls(**d)


@dataclass
class RestorationPair:
    """Clean/degraded image pair plus the recipe that produced it."""

    hq: np.ndarray
    lq: np.ndarray
    spec: DegradationSpec = field(default_factory=DegradationSpec)

    def __post_init__(self):
        if self.hq.shape != self.lq.shape:
            raise ValueError("hq and lq must have identical shapes")


def add_gaussian_noise(img: np.ndarray, sigma: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise at std sigma/255, clipped to [0, 1]."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    noisy = img + (sigma / 255.0) * rng.standard_normal(img.shape)
    return np.clip(noisy, 0.0, 1.0).astype(img.dtype, copy=False)


def motion_blur_kernel(length: int, angle_degrees: float) -> np.ndarray:
    """Normalized line kernel of odd length at the given angle.

    A segment of the given length through the kernel center is rasterized
    by midpoint sampling with nearest-cell rounding; at axis-aligned angles
    this reduces to an exact uniform row/column of 1/length.
    """
    if length < 1 or length % 2 == 0:
        raise ValueError(f"kernel length must be odd and >= 1, got {length}")
    if length == 1:
        return np.ones((1, 1))
    k = np.zeros((length, length))
    theta = math.radians(angle_degrees)
    c = (length - 1) // 2
    n = 16 * length
    for t in (np.arange(n) + 0.5) / n * length - length / 2:
        xi = int(round(c + t * math.cos(theta)))
        yi = int(round(c + t * math.sin(theta)))
        if 0 <= xi < length and 0 <= yi < length:
            k[yi, xi] += 1.0
    return k / k.sum()


def apply_motion_blur(img: np.ndarray, kernel_length: int,
                      angle_degrees: float = 0.0) -> np.ndarray:
    """Convolve with a normalized line kernel, reflect padding at borders."""
    k = motion_blur_kernel(kernel_length, angle_degrees)
    if img.ndim == 2:
        out = ndimage.convolve(img, k, mode="reflect")
    else:
        out = np.stack([ndimage.convolve(img[..., ch], k, mode="reflect")
                        for ch in range(img.shape[-1])], axis=-1)
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def _draw_line(layer: np.ndarray, x0: float, y0: float, angle: float,
               length: float, intensity: float):
    """Splat an anti-aliased line segment additively into layer."""
    h, w = layer.shape
    n = max(2, int(3 * length))
    for t in np.linspace(0.0, length, n):
        x = x0 + t * math.cos(angle)
        y = y0 + t * math.sin(angle)
        xi, yi = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - xi, y - yi
        amp = intensity * length / n
        for dx, wx in ((0, 1 - fx), (1, fx)):
            for dy, wy in ((0, 1 - fy), (1, fy)):
                px, py = xi + dx, yi + dy
                if 0 <= px < w and 0 <= py < h:
                    layer[py, px] += amp * wx * wy


def apply_rain_streaks(img: np.ndarray, spec: DegradationSpec,
                       rng: np.random.Generator) -> np.ndarray:
    """Screen-blend randomly placed anti-aliased streaks onto the image.

    Screen blending (1 - (1-img)(1-layer)) never darkens a pixel, so mean
    brightness is non-decreasing.
    """
    if spec.streak_count < 0:
        raise ValueError("streak_count must be >= 0")
    if spec.streak_count == 0:
        return img.copy()
    h, w = img.shape[:2]
    layer = np.zeros((h, w))
    angle = math.radians(90.0 - spec.angle_degrees)  # 0 deg = vertical fall
    for _ in range(spec.streak_count):
        x0 = rng.uniform(-spec.streak_length, w)
        y0 = rng.uniform(-spec.streak_length, h)
        length = spec.streak_length * rng.uniform(0.6, 1.4)
        _draw_line(layer, x0, y0, angle, length, spec.streak_intensity)
    layer = np.clip(layer, 0.0, 1.0)
    if img.ndim == 3:
        layer = layer[..., None]
    out = 1.0 - (1.0 - img) * (1.0 - layer)
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def make_pair(hq: np.ndarray, spec: DegradationSpec,
              rng: np.random.Generator | None = None) -> RestorationPair:
    """Degrade hq according to spec; a fresh generator is seeded from the
    spec when none is passed, making pairs replayable from the record."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian_noise":
        lq = add_gaussian_noise(hq, spec.sigma, rng)
    elif spec.kind == "motion_blur":
        lq = apply_motion_blur(hq, spec.kernel_length, spec.angle_degrees)
    elif spec.kind == "rain_streaks":
        lq = apply_rain_streaks(hq, spec, rng)
    else:
        raise ValueError(f"unknown degradation kind {spec.kind!r}")
    return RestorationPair(hq=hq, lq=lq, spec=spec)
