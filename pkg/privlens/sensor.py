"""
Image acquisition ``y = C(H * x) + eta``: linear (zero-padded) convolution
with the PSF, additive Gaussian sensor noise and a linear camera response
that clamps to ``[0, 1]``.
"""
import logging

import numpy as np
from scipy.signal import fftconvolve

from .config import NoiseSpec
from .errors import ShapeMismatchError
from .optics import PSFStack

logger = logging.getLogger(__name__)


def as_image(image) -> np.ndarray:
    """Return ``image`` as a float64 ``H x W x C`` array"""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"Images must be H x W x C, got shape {arr.shape}")
    return arr


def convolve(image, psf: PSFStack) -> np.ndarray:
    """
    Per-channel linear convolution via zero-padded FFT multiplication,
    center-cropped back to the image size. The kernel center is pixel
    ``K // 2``, so a centered delta kernel reproduces the input.
    """
    image = as_image(image)
    if image.shape[2] != psf.channels:
        raise ShapeMismatchError("image channels vs PSF channels", (image.shape[2],), (psf.channels,))
    height, width = image.shape[:2]
    out = np.empty_like(image)
    for channel, kernel in enumerate(psf.kernels):
        ky, kx = kernel.shape
        cy, cx = ky // 2, kx // 2
        if kernel[cy, cx] == 1.0 and np.count_nonzero(kernel) == 1:
            out[:, :, channel] = image[:, :, channel]
            continue
        full = fftconvolve(image[:, :, channel], kernel, mode="full")
        out[:, :, channel] = full[cy:cy + height, cx:cx + width]
    return out


def camera_response(signal: np.ndarray) -> np.ndarray:
    """Linear response followed by the sensor's ``[0, 1]`` clamp"""
    return np.clip(signal, 0.0, 1.0)


def noise_stream(noise: NoiseSpec, image_id: int, channel: int) -> np.random.Generator:
    """
    Independent Gaussian stream for one ``(image, channel)`` pair, so the
    order in which images or channels are processed never changes results.
    """
    sequence = np.random.SeedSequence(noise.seed, spawn_key=(int(image_id), int(channel)))
    return np.random.Generator(np.random.Philox(sequence))


def sensor_noise(shape, noise: NoiseSpec, image_id: int = 0) -> np.ndarray:
    height, width, channels = shape
    out = np.zeros(shape)
    if noise.sigma == 0:
        return out
    for channel in range(channels):
        rng = noise_stream(noise, image_id, channel)
        out[:, :, channel] = noise.sigma * rng.standard_normal((height, width))
    return out


def capture(x, psf: PSFStack, noise: NoiseSpec, image_id: int = 0) -> np.ndarray:
    """Simulated capture of the scene ``x`` (values in ``[0, 1]``) through ``psf``"""
    blurred = convolve(x, psf)
    return camera_response(blurred + sensor_noise(blurred.shape, noise, image_id))


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError("MSE operands", a.shape, b.shape)
    return float(np.mean((a - b) ** 2))
