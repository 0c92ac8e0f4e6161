"""
Image quality metrics on ``[0, 1]`` images.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError
from .sensor import as_image, mse

SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a, b) -> float:
    """
    ``10 log10(1 / MSE)`` in dB; identical images give ``inf``.

    >>> round(psnr([[0.0, 0.0]], [[0.1, 0.1]]), 6)
    20.0
    >>> psnr([[0.5]], [[0.5]])
    inf
    """
    return psnr_from_mse(mse(a, b))


def psnr_from_mse(error: float) -> float:
    if error == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / error)


def ssim(a, b, window: int = SSIM_WINDOW, stride: int = SSIM_STRIDE) -> float:
    """
    Mean structural similarity over ``window x window`` patches taken every
    ``stride`` pixels, on a ``[0, 1]`` dynamic range, averaged over patches
    and channels. Patch statistics are population (biased) estimates.
    """
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("SSIM operands", a.shape, b.shape)
    height, width = a.shape[:2]
    if height < window or width < window:
        raise ValueError(f"Images of {height}x{width} are smaller than the {window}x{window} SSIM window")

    def patches(img):
        view = sliding_window_view(img, (window, window), axis=(0, 1))
        return view[::stride, ::stride]

    pa, pb = patches(a), patches(b)
    axes = (-2, -1)
    mu_a, mu_b = pa.mean(axis=axes), pb.mean(axis=axes)
    var_a = pa.var(axis=axes)
    var_b = pb.var(axis=axes)
    cov = (pa * pb).mean(axis=axes) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(numerator / denominator))
