"""Structural similarity between grayscale frames.

Pinned instantiation so goldens stay stable: 8x8 sliding window (stride 1,
valid positions only), uniform weighting, C1 = (0.01*255)^2,
C2 = (0.03*255)^2, biased window variances, final score = mean over windows.
Inputs are float or integer intensity grids in [0, 255].
"""
from __future__ import annotations

import numpy as np

WINDOW = 8
C1 = (0.01 * 255.0) ** 2
C2 = (0.03 * 255.0) ** 2

# ITU-R 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """HxWx3 to HxW luma, or pass an HxW grid through, as float64."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            return arr[:, :, 0]
        return arr[:, :, :3] @ _LUMA
    if arr.ndim != 2:
        raise ValueError(f"expected HxW or HxWxC pixels, got shape {arr.shape}")
    return arr


def _box_sums(x: np.ndarray, win: int) -> np.ndarray:
    """Sums over every win x win window (stride 1) via an integral image."""
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]


def compute_ssim(a: np.ndarray, b: np.ndarray, window: int = WINDOW) -> float:
    """Mean SSIM over all sliding windows of two equal-size grayscale frames.

    Symmetric, and exactly 1.0 for identical inputs. Frames smaller than the
    window fall back to a single whole-frame window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2-D grayscale frames, got shape {a.shape}")
    win = min(window, a.shape[0], a.shape[1])
    n = float(win * win)

    s_a = _box_sums(a, win)
    s_b = _box_sums(b, win)
    s_aa = _box_sums(a * a, win)
    s_bb = _box_sums(b * b, win)
    s_ab = _box_sums(a * b, win)

    mu_a = s_a / n
    mu_b = s_b / n
    var_a = s_aa / n - mu_a * mu_a
    var_b = s_bb / n - mu_b * mu_b
    cov = s_ab / n - mu_a * mu_b

    ssim_map = ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) / (
        (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    )
    return float(np.mean(ssim_map))
