"""
Camera models used across commands: Zernike phase-mask lenses, the ideal
identity optics, a pure defocus lens and a fixed low-resolution camera.
"""
import abc
import logging
from typing import Optional

import cv2
import numpy as np

from .cache import DummyCache, _Cache
from .config import PAPER_HW_COEFFICIENTS_PATH, LensSpec, NoiseSpec, OpticsConfig
from .io import load_coefficients
from .optics import PSFStack, compute_psf, defocus_coefficients, resolve_defocus_beta4
from .sensor import as_image, camera_response, capture, sensor_noise
from .zernike import ZernikeCoefficients

logger = logging.getLogger(__name__)


class Lens(abc.ABC):
    kind: str = ""

    def __init__(self, name: str):
        self.name = name

    @property
    def psf(self) -> Optional[PSFStack]:
        """The shift-invariant PSF, or ``None`` when the camera has none"""
        return None

    @abc.abstractmethod
    def capture(self, x: np.ndarray, noise: NoiseSpec, image_id: int = 0) -> np.ndarray:
        pass

    def __repr__(self):
        return f"{self.__class__.__name__}(name={self.name!r})"


class PSFLens(Lens):

    def __init__(self, name: str, psf: PSFStack, coefficients: Optional[ZernikeCoefficients] = None,
                 kind: str = "zernike"):
        super().__init__(name)
        self._psf = psf
        self.coefficients = coefficients
        self.kind = kind

    @property
    def psf(self) -> PSFStack:
        return self._psf

    def capture(self, x, noise, image_id=0):
        return capture(x, self._psf, noise, image_id)


class LowResolutionLens(Lens):
    """
    Fixed-optics low-resolution camera: the scene is box-averaged onto an
    ``S x S`` sensor, noise is added per sensor pixel, and the result is
    nearest-neighbour upsampled back to the scene size.
    """
    kind = "lowres"

    def __init__(self, name: str, size_px: int = 16):
        super().__init__(name)
        self.size_px = size_px

    def downsample(self, x: np.ndarray) -> np.ndarray:
        x = as_image(x)
        small = cv2.resize(x, (self.size_px, self.size_px), interpolation=cv2.INTER_AREA)
        return small.reshape(self.size_px, self.size_px, x.shape[2])

    def upsample(self, small: np.ndarray, shape) -> np.ndarray:
        height, width, channels = shape
        big = cv2.resize(small, (width, height), interpolation=cv2.INTER_NEAREST)
        return big.reshape(height, width, channels)

    def capture(self, x, noise, image_id=0):
        x = as_image(x)
        small = self.downsample(x)
        small = camera_response(small + sensor_noise(small.shape, noise, image_id))
        return self.upsample(small, x.shape)


def render_psf(coefficients: ZernikeCoefficients, optics: OpticsConfig, cache: _Cache = None) -> PSFStack:
    """:func:`compute_psf` through an optional persistent cache"""
    cache = cache or DummyCache()
    fp = cache.fingerprint(optics, coefficients)
    try:
        psf = cache[fp]
        logger.debug("PSF cache hit")
    except KeyError:
        psf = compute_psf(coefficients, optics)
        cache[fp] = psf
    return psf


def paper_hw_coefficients() -> ZernikeCoefficients:
    return load_coefficients(PAPER_HW_COEFFICIENTS_PATH)


def lens_coefficients(spec: LensSpec, optics: OpticsConfig) -> Optional[ZernikeCoefficients]:
    if spec.kind == "zernike":
        return load_coefficients(spec.coefficients_file)
    if spec.kind == "paper-hw":
        return paper_hw_coefficients()
    if spec.kind == "zero":
        return ZernikeCoefficients.zeros(1)
    if spec.kind == "defocus":
        amount = spec.defocus_beta4_um
        if amount is None:
            amount = resolve_defocus_beta4(optics)
        return defocus_coefficients(amount)
    return None


def build_lens(spec: LensSpec, optics: OpticsConfig, cache: _Cache = None) -> Lens:
    if spec.kind == "lowres":
        return LowResolutionLens(spec.name, spec.size_px)
    if spec.kind == "delta":
        return PSFLens(spec.name, PSFStack.delta(optics.channels, optics.psf_crop_px), kind="delta")
    coefficients = lens_coefficients(spec, optics)
    psf = render_psf(coefficients, optics, cache)
    logger.info("Rendered lens '%s' (%s) with %i coefficients", spec.name, spec.kind, coefficients.p)
    return PSFLens(spec.name, psf, coefficients=coefficients, kind=spec.kind)
