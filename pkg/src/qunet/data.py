"""Image/mask ingestion, bilinear resizing, partitions and a synthetic dataset."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .exceptions import IngestionError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

# 64-bit LCG (Knuth MMIX constants); the upper 31 bits feed the shuffle
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = (1 << 64) - 1


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (1, H, W) in {0, 1}
    id: str


@dataclass(frozen=True)
class Partition:
    seed: int
    train_ids: tuple
    test_ids: tuple


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a (C, H, W) array with half-pixel centres (align_corners=False).

    Source coordinates are ``(dst + 0.5) * in / out - 0.5`` clamped to the
    image; no anti-aliasing filter is applied when shrinking.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    top = image[:, y0, :] * (1 - fy)[None, :, None] + image[:, y1, :] * fy[None, :, None]
    return top[:, :, x0] * (1 - fx)[None, None, :] + top[:, :, x1] * fx[None, None, :]


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(mask) >= threshold).astype(np.float64)


def _index_stems(directory: Path):
    out = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES:
            out.setdefault(path.stem, path)
    return out


def load_dataset(images_dir, masks_dir, size: Optional[int] = None) -> List[Sample]:
    """Pair images with same-stem masks, in lexicographic stem order.

    Pixels are scaled to [0, 1]; masks are read as grayscale and binarized
    at 0.5, after resizing when ``size`` is given.
    """
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    for d in (images_dir, masks_dir):
        if not d.is_dir():
            raise IngestionError(f"not a directory: {d}")
    images, masks = _index_stems(images_dir), _index_stems(masks_dir)
    missing = [stem for stem in images if stem not in masks]
    if missing:
        raise IngestionError(f"no mask for image stem(s): {', '.join(missing)}")

    samples = []
    for stem in sorted(images):
        with Image.open(images[stem]) as im:
            img = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        with Image.open(masks[stem]) as im:
            msk = np.asarray(im.convert("L"), dtype=np.float64)[None] / 255.0
        if img.shape[1:] != msk.shape[1:]:
            raise IngestionError(f"{stem}: image {img.shape[1:]} and mask {msk.shape[1:]} sizes differ")
        if size is not None:
            img = bilinear_resize(img, size, size)
            msk = bilinear_resize(msk, size, size)
        samples.append(Sample(np.clip(img, 0.0, 1.0), binarize(msk), stem))
    return samples


class LCG:
    """Small deterministic generator; identical streams on every platform."""

    def __init__(self, seed: int):
        self.state = (int(seed) * LCG_MULTIPLIER + LCG_INCREMENT) & _MASK64

    def next(self) -> int:
        self.state = (self.state * LCG_MULTIPLIER + LCG_INCREMENT) & _MASK64
        return self.state >> 33

    def below(self, n: int) -> int:
        return self.next() % n

    def shuffle(self, items: list) -> list:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def make_partitions(ids: Sequence[str], n_partitions: int = 10, train_fraction: float = 0.8) -> List[Partition]:
    """Partition ``k`` shuffles ``ids`` with ``LCG(k)`` and takes the first share for training."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot partition an empty id list")
    if n_partitions < 1:
        raise ValueError("n_partitions must be at least 1")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(round(len(ids) * train_fraction))
    if len(ids) > 1:
        n_train = min(max(n_train, 1), len(ids) - 1)
    parts = []
    for k in range(n_partitions):
        order = LCG(k).shuffle(list(ids))
        parts.append(Partition(k, tuple(order[:n_train]), tuple(order[n_train:])))
    return parts


def _smooth_noise(rng: np.random.Generator, size: int, coarse: int) -> np.ndarray:
    grid = rng.uniform(0.0, 1.0, size=(3, coarse, coarse))
    return bilinear_resize(grid, size, size)


def synth_dataset(n: int, size: int = 32, seed: int = 0) -> List[Sample]:
    """Random ellipses and rectangles on a dim textured background.

    Shapes are saturated colours with one channel near full brightness and
    the background stays below ~0.45, so colour alone separates the classes.
    Each mask covers between 5% and 60% of the image.
    """
    if size not in (16, 32, 64):
        raise ValueError(f"size must be 16, 32 or 64, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    samples = []
    for i in range(n):
        while True:
            cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
            ry, rx = rng.uniform(0.12 * size, 0.42 * size, size=2)
            if rng.random() < 0.5:
                region = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            else:
                region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
            frac = region.mean()
            if 0.05 < frac < 0.6:
                break
        background = 0.1 + 0.25 * _smooth_noise(rng, size, 4) + rng.normal(0.0, 0.03, (3, size, size))
        colour = rng.uniform(0.0, 0.6, size=3)
        colour[rng.integers(3)] = rng.uniform(0.85, 1.0)
        shape = colour[:, None, None] + rng.normal(0.0, 0.03, (3, size, size))
        image = np.where(region[None], shape, background)
        samples.append(Sample(np.clip(image, 0.0, 1.0), region[None].astype(np.float64), f"synth{i:05d}"))
    return samples


def stack(samples: Sequence[Sample]):
    """(images, masks) arrays of shape (N, 3, H, W) and (N, 1, H, W)."""
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])
