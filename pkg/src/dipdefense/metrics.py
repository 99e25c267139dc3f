"""Image quality and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class SsimConfig:
    """Parameters of the Gaussian-windowed SSIM.

    A 7-pixel window suits 32x32 inputs; use ``window_size=11`` for 224x224.
    """

    window_size: int = 7
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ConfigurationError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.gaussian_sigma <= 0 or self.data_range <= 0:
            raise ConfigurationError("gaussian_sigma and data_range must be positive")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable correlation over the last two axes, keeping only full windows
    n = kernel.size
    rows = sliding_window_view(img, n, axis=-2) @ kernel
    return sliding_window_view(rows, n, axis=-1) @ kernel


def ssim_map(a, b, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """Per-channel local SSIM maps of shape (C, H - w + 1, W - w + 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise InputError(f"expected (C, H, W) or (H, W) images, got {a.shape}")
    if min(a.shape[-2:]) < cfg.window_size:
        raise InputError(f"image {a.shape[-2:]} is smaller than the {cfg.window_size}-pixel window")

    k = gaussian_kernel(cfg.window_size, cfg.gaussian_sigma)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2

    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean structural similarity between two images, averaged over channels."""
    value = float(np.mean(ssim_map(a, b, cfg)))
    return min(1.0, max(-1.0, value))


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(data_range**2 / mse)


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.size == 0:
        raise InputError("accuracy of an empty label set is undefined")
    if predicted.shape != truth.shape:
        raise InputError(f"length mismatch: {predicted.size} predictions vs {truth.size} labels")
    return float(np.count_nonzero(predicted == truth)) / predicted.size
