"""PSNR and SSIM on images in [0, 1].

Inputs may be a single image (C, H, W) / (H, W) or a batch (N, C, H, W);
batched calls return the mean of the per-image values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def to_unit_range(x):
    """Model range [-1, 1] -> [0, 1]."""
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def _as_batch(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None, None], b[None, None]
    elif a.ndim == 3:
        a, b = a[None], b[None]
    elif a.ndim != 4:
        raise ValueError(f"expected 2-, 3- or 4-D images, got shape {a.shape}")
    return a, b


def psnr_per_image(a, b) -> np.ndarray:
    a, b = _as_batch(a, b)
    mse = ((a - b) ** 2).reshape(len(a), -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(1.0 / mse)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for a dynamic range of 1. Identical inputs give +inf."""
    return float(np.mean(psnr_per_image(a, b)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' filtering of (..., H, W) with 1-D kernel ``g``."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-2) @ g


def _luma(x):
    # x is (N, C, H, W); RGB -> BT.601 luma, single channel passes through
    if x.shape[1] == 3:
        return np.einsum("c,nchw->nhw", LUMA, x)
    if x.shape[1] == 1:
        return x[:, 0]
    raise ValueError(f"expected 1 or 3 channels, got {x.shape[1]}")


def ssim_per_image(a, b) -> np.ndarray:
    a, b = _as_batch(a, b)
    ya, yb = _luma(a), _luma(b)
    if min(ya.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {ya.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    c1, c2 = K1**2, K2**2
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    s_aa = _filter_valid(ya * ya, g) - mu_a * mu_a
    s_bb = _filter_valid(yb * yb, g) - mu_b * mu_b
    s_ab = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    smap = num / den
    return smap.reshape(len(smap), -1).mean(axis=1)


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), on luma for RGB."""
    return float(np.mean(ssim_per_image(a, b)))


def cap_psnr(value: float) -> float:
    return PSNR_CAP if not math.isfinite(value) or value > PSNR_CAP else value


@dataclass
class MetricReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, restored, reference):
        self.psnr.append(psnr(restored, reference))
        small = min(np.shape(reference)[-2:]) < SSIM_WINDOW
        self.ssim.append(float("nan") if small else ssim(restored, reference))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([cap_psnr(p) for p in self.psnr])) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def csv_rows(self, label: str):
        rows = [[label, str(i), f"{cap_psnr(p):.4f}", f"{s:.4f}"] for i, (p, s) in enumerate(zip(self.psnr, self.ssim))]
        rows.append([label, "mean", f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.4f}"])
        return rows
