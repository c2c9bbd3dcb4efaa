"""Data ingestion and sampling: paired-folder datasets, aligned random
crops, dihedral augmentation, synthetic source images, and PNG I/O.

Images cross this module as float32 arrays in [0, 1], shape (H, W, 3).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .degrade import RestorationPair

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """8-bit image file -> float32 RGB array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(img: np.ndarray, path: str | os.PathLike):
    """Float [0, 1] array -> 8-bit RGB PNG (rounded, clipped)."""
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    Image.fromarray(arr, mode="RGB").save(path)


def list_images(folder: str | os.PathLike) -> list[str]:
    return sorted(f for f in os.listdir(folder)
                  if f.lower().endswith(IMAGE_EXTS))


@dataclass
class PairedFolderDataset:
    """Lazily indexed clean/degraded pairs matched by filename."""

    hq_dir: str
    lq_dir: str
    names: list[str]

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        name = self.names[i]
        return (load_image(Path(self.hq_dir) / name),
                load_image(Path(self.lq_dir) / name))


def load_paired_folder(hq_dir: str | os.PathLike,
                       lq_dir: str | os.PathLike) -> PairedFolderDataset:
    """Index equally named files in two directories; any orphan is an error."""
    hq_names, lq_names = set(list_images(hq_dir)), set(list_images(lq_dir))
    orphans = sorted(hq_names ^ lq_names)
    if orphans:
        raise FileNotFoundError(
            "unpaired files between "
            f"{hq_dir} and {lq_dir}: {', '.join(orphans)}")
    if not hq_names:
        raise FileNotFoundError(f"no images found in {hq_dir}")
    return PairedFolderDataset(str(hq_dir), str(lq_dir), sorted(hq_names))


def sample_patch(hq: np.ndarray, lq: np.ndarray, size: int,
                 rng: np.random.Generator):
    """Identical random crop window applied to both images."""
    h, w = hq.shape[:2]
    if hq.shape[:2] != lq.shape[:2]:
        raise ValueError("hq and lq must share spatial shape")
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return (hq[top:top + size, left:left + size],
            lq[top:top + size, left:left + size])


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """Element k of the dihedral group of the square, k in 0..7.

    k = rot + 4*flip: rotate by 90*rot degrees, then flip horizontally
    when the flip bit is set.
    """
    if not 0 <= k <= 7:
        raise ValueError(f"dihedral index out of range: {k}")
    out = np.rot90(img, k % 4)
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def dihedral_inverse(k: int) -> int:
    """Index of the inverse transform: dihedral(dihedral(x, k), inv) == x."""
    rot, flip = k % 4, k >= 4
    if flip:
        return k          # flipped elements are involutions
    return (4 - rot) % 4


def augment(hq: np.ndarray, lq: np.ndarray, rng: np.random.Generator,
            k: int | None = None):
    """Draw one of the 8 dihedral transforms and apply it to both images.

    Rotations require square patches. Returns (hq, lq, k) so the draw can
    be recorded or inverted.
    """
    if hq.shape[0] != hq.shape[1]:
        raise ValueError("augmentation requires square patches")
    if k is None:
        k = int(rng.integers(0, 8))
    return dihedral(hq, k), dihedral(lq, k), k


def synthetic_images(n: int, size: int, rng: np.random.Generator,
                     channels: int = 3) -> np.ndarray:
    """Smooth random test images: gradients, soft blobs, and sinusoids.

    Values concentrate in the mid-range so additive-noise statistics stay
    essentially unclipped. Shape (n, size, size, channels).
    """
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    out = np.empty((n, size, size, channels), dtype=np.float32)
    for i in range(n):
        img = np.zeros((size, size, channels))
        g = rng.uniform(-0.5, 0.5, size=(2, channels))
        img += 0.5 + g[0] * (xx[..., None] - 0.5) + g[1] * (yy[..., None] - 0.5)
        for _ in range(4):
            cx, cy = rng.uniform(0, 1, 2)
            rad = rng.uniform(0.08, 0.35)
            blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rad ** 2)))
            img += rng.uniform(-0.25, 0.25, channels) * blob[..., None]
        fx, fy = rng.uniform(1, 6, 2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        img += rng.uniform(0.02, 0.08) * wave[..., None]
        out[i] = np.clip(img, 0.05, 0.95)
    return out
