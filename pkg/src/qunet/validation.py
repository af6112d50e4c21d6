"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def check_images(X, channels: int = 3, size=None) -> np.ndarray:
    """Return ``X`` as a finite float64 (N, C, H, W) array.

    A single (C, H, W) image is promoted to a batch of one.
    """
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ShapeError(f"images must be (N, C, H, W), got shape {X.shape}")
    if X.shape[1] != channels:
        raise ShapeError(f"expected {channels} channels, got {X.shape[1]}")
    if X.shape[2] != X.shape[3]:
        raise ShapeError(f"images must be square, got {X.shape[2]}x{X.shape[3]}")
    if size is not None and X.shape[2] != size:
        raise ShapeError(f"expected {size}x{size} images, got {X.shape[2]}x{X.shape[3]}")
    return X


def check_masks(y, images: np.ndarray) -> np.ndarray:
    """Return ``y`` as (N, 1, H, W) {0, 1} float64 matching ``images``."""
    y = check_array(y, ensure_2d=False, allow_nd=True, dtype=np.float64)
    n, _, h, w = images.shape
    if y.shape == (n, h, w):
        y = y[:, None]
    if y.shape != (n, 1, h, w):
        raise ShapeError(f"masks must be ({n}, 1, {h}, {w}) or ({n}, {h}, {w}), got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("masks must be binary (0/1)")
    return y


def check_feature_maps(X) -> np.ndarray:
    """Return ``X`` as float64 (B, C, H, W); a (C, H, W) input becomes B=1."""
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ShapeError(f"feature maps must be (B, C, H, W), got shape {X.shape}")
    return X
