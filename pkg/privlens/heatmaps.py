import abc
import logging
import math
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ShapeMismatchError

logger = logging.getLogger(__name__)

REC601_WEIGHTS = (0.299, 0.587, 0.114)


class HeatmapExtractor(abc.ABC):
    """
    Face heatmap regressor ``U``: maps an image to an ``H x W`` grid in
    ``[0, 1]``. Implementations must be deterministic.
    """

    @abc.abstractmethod
    def extract(self, image: np.ndarray) -> np.ndarray:
        pass

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return self.extract(image)


def luminance(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[2] == 3:
        return np.tensordot(image, np.array(REC601_WEIGHTS), axes=([2], [0]))
    return image.mean(axis=2)


def lowpass_heatmap_proxy(image, cutoff: float) -> np.ndarray:
    """
    Low-pass luminance map, min-max normalized to ``[0, 1]``. ``cutoff`` is
    a fraction of the Nyquist frequency where the Gaussian response drops
    to ``exp(-1/2)``. A constant image yields an all-zero map.
    """
    if not 0 < cutoff < 1:
        raise ValueError(f"cutoff must be in (0, 1), got {cutoff}")
    sigma_px = 1.0 / (math.pi * cutoff)
    smooth = gaussian_filter(luminance(image), sigma=sigma_px, mode="reflect")
    lo, hi = smooth.min(), smooth.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(smooth)
    return (smooth - lo) / (hi - lo)


class LowpassHeatmapProxy(HeatmapExtractor):
    """Default ``U`` that works on blurred captures without a neural network"""

    def __init__(self, cutoff: float = 0.1):
        if not 0 < cutoff < 1:
            raise ValueError(f"cutoff must be in (0, 1), got {cutoff}")
        self.cutoff = cutoff

    def extract(self, image: np.ndarray) -> np.ndarray:
        return lowpass_heatmap_proxy(image, self.cutoff)

    def __repr__(self):
        return f"LowpassHeatmapProxy(cutoff={self.cutoff})"


def landmark_heatmap_oracle(landmarks: Iterable[Sequence[float]], shape: Tuple[int, int],
                            sigma_px: float) -> np.ndarray:
    """
    Max-composite of isotropic Gaussian blobs of peak 1 centered at each
    ``(x, y)`` landmark (column, row).
    """
    height, width = shape[:2]
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    heatmap = np.zeros((height, width))
    for point in landmarks:
        x, y = float(point[0]), float(point[1])
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"Landmark ({x}, {y}) outside the {width}x{height} image")
        blob = np.exp(-((cols - x) ** 2 + (rows - y) ** 2) / (2.0 * sigma_px ** 2))
        np.maximum(heatmap, blob, out=heatmap)
    return heatmap


def hmap_loss(m_y: np.ndarray, m_x_star: np.ndarray) -> float:
    """Mean absolute difference between two heatmaps"""
    m_y = np.asarray(m_y, dtype=np.float64)
    m_x_star = np.asarray(m_x_star, dtype=np.float64)
    if m_y.shape != m_x_star.shape:
        raise ShapeMismatchError("heatmaps", m_y.shape, m_x_star.shape)
    return float(np.mean(np.abs(m_y - m_x_star)))
