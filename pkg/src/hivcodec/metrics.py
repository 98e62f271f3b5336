"""Reconstruction quality metrics: PSNR and multi-scale SSIM on [0, 1] images."""

from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 99.0

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError(f"expected (C, H, W) or (H, W) images, got {a.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; identical images report the 99 dB cap."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size=_WINDOW, sigma=_SIGMA):
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, kernel):
    """Separable valid-mode Gaussian filtering of a (C, H, W) image."""
    k = kernel.size
    from numpy.lib.stride_tricks import sliding_window_view
    rows = sliding_window_view(img, k, axis=2) @ kernel
    return sliding_window_view(rows, k, axis=1) @ kernel


def _ssim_per_channel(a, b):
    """Spatial means of the SSIM and contrast-structure maps, per channel."""
    kern = _gaussian_kernel()
    mu_a = _filter_valid(a, kern)
    mu_b = _filter_valid(b, kern)
    var_a = _filter_valid(a * a, kern) - mu_a * mu_a
    var_b = _filter_valid(b * b, kern) - mu_b * mu_b
    cov = _filter_valid(a * b, kern) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + _C1) / (mu_a ** 2 + mu_b ** 2 + _C1)
    cs = (2.0 * cov + _C2) / (var_a + var_b + _C2)
    return (lum * cs).mean(axis=(1, 2)), cs.mean(axis=(1, 2))


def _downsample2(img):
    """2x2 average pooling; odd trailing rows/columns are edge-padded first."""
    c, h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, 0), (0, h % 2), (0, w % 2)), mode="symmetric")
        c, h, w = img.shape
    return img.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def n_usable_scales(h, w, max_scales=5):
    """Scales for which the downsampled image still fits the 11x11 window."""
    n = 0
    m = min(h, w)
    while n < max_scales and m >= _WINDOW:
        n += 1
        m //= 2
    return n


def ms_ssim(a, b):
    """Multi-scale structural similarity in [0, 1], per channel then averaged.

    Five scales with the standard weights when the image is large enough
    (min dimension 176); smaller images use fewer scales with the weight
    prefix renormalized to sum to one.
    """
    a, b = _check_pair(a, b)
    scales = n_usable_scales(a.shape[1], a.shape[2])
    if scales == 0:
        raise ValueError(f"image too small for an {_WINDOW}x{_WINDOW} window")
    weights = np.array(MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    mcs = []
    lum_cs = None
    for s in range(scales):
        lum_cs, cs = _ssim_per_channel(a, b)
        mcs.append(np.maximum(cs, 0.0))
        if s < scales - 1:
            a = _downsample2(a)
            b = _downsample2(b)
    terms = np.stack(mcs[:-1] + [np.maximum(lum_cs, 0.0)])
    per_channel = np.prod(terms ** weights[:, None], axis=0)
    return float(per_channel.mean())
