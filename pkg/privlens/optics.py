"""
Wave-optics PSF model.

The pupil field of channel ``c`` is::

    P(u, v) = A(u, v) * W * P_t(u, v) * L(u, v) * exp(-i k phi(u, v))

with ``A`` the circular aperture, ``W`` a unit on-axis plane wave, ``P_t``
the propagation phase of a point source at the object distance, ``L`` the
focusing phase of a thin lens imaging the focus distance onto the sensor,
and ``phi`` the Zernike surface height. The field is propagated to the
sensor with the Fresnel transfer function ``T`` and the PSF is its squared
modulus, center-cropped to ``K x K`` sensor pixels and normalized to unit
sum. Phases follow the ``exp(-i k z)`` convention, lengths are handled in
micrometers internally.
"""
import functools
import logging
import math
from typing import Optional, Tuple

import attr
import numpy as np
from scipy import fft
from scipy.ndimage import map_coordinates
from scipy.optimize import brentq

from .config import OpticsConfig
from .errors import ConfigError, NumericalError, UnitsError
from .zernike import COEFFICIENT_UNITS, ZernikeCoefficients, get_grid, synthesize_phase

logger = logging.getLogger(__name__)

DEFOCUS_NOLL_INDEX = 4
CROP_LOSS_WARNING = 0.01
_crop_loss_reported = set()


@attr.s(auto_attribs=True, frozen=True, eq=False)
class PSFStack:
    """Per-channel ``K x K`` non-negative kernels, each summing to one"""
    kernels: np.ndarray
    config: Optional[OpticsConfig] = None
    crop_loss: Tuple[float, ...] = ()

    @property
    def channels(self) -> int:
        return int(self.kernels.shape[0])

    @property
    def size(self) -> int:
        return int(self.kernels.shape[-1])

    @classmethod
    def delta(cls, channels: int, size: int) -> "PSFStack":
        kernels = np.zeros((channels, size, size))
        kernels[:, size // 2, size // 2] = 1.0
        return cls(kernels)

    def is_delta(self) -> bool:
        center = self.size // 2
        expected = np.zeros_like(self.kernels)
        expected[:, center, center] = 1.0
        return bool(np.array_equal(self.kernels, expected))


def _check_channel(config: OpticsConfig, channel: int):
    if not 0 <= channel < config.channels:
        raise ValueError(f"Channel {channel} out of range for {config.channels} wavelengths")


def wavelength_um(config: OpticsConfig, channel: int) -> float:
    return config.wavelengths_nm[channel] / 1000.0


def wavenumber(config: OpticsConfig, channel: int) -> float:
    """``k = 2 pi / lambda`` in radians per micrometer"""
    return 2 * math.pi / wavelength_um(config, channel)


def _pupil_radius_squared(config: OpticsConfig) -> np.ndarray:
    grid = get_grid(config.pupil_resolution_px)
    radius_um = config.aperture_diameter_mm * 500.0
    return (grid.u ** 2 + grid.v ** 2) * radius_um ** 2


def _quadratic_phase(config: OpticsConfig, channel: int, curvature_per_um: float) -> np.ndarray:
    """``exp(i k/2 * curvature * r^2)`` over the pupil grid"""
    if curvature_per_um == 0:
        return np.ones((config.pupil_resolution_px,) * 2, dtype=complex)
    k = wavenumber(config, channel)
    return np.exp(1j * 0.5 * k * curvature_per_um * _pupil_radius_squared(config))


def propagation_phase(config: OpticsConfig, channel: int) -> np.ndarray:
    """
    Propagation phase ``P_t = exp(-i k/(2d) (u^2 + v^2))`` of a point source
    at the object distance ``d``, on pupil coordinates scaled by the
    physical aperture radius. An infinite distance gives a plane wave.
    """
    _check_channel(config, channel)
    distance_um = config.object_distance_m * 1e6
    return _quadratic_phase(config, channel, -1.0 / distance_um)


def lens_phase(config: OpticsConfig, channel: int) -> np.ndarray:
    """Thin-lens phase that images the focus distance onto the sensor"""
    _check_channel(config, channel)
    power = 1.0 / (config.focus_distance * 1e6) + 1.0 / (config.sensor_distance_m * 1e6)
    return _quadratic_phase(config, channel, power)


def transfer_function(config: OpticsConfig, channel: int) -> np.ndarray:
    """
    Fresnel transfer function for the pupil-to-sensor distance, laid out in
    unshifted FFT order. The constant ``exp(-i k z)`` factor is dropped and
    evanescent frequencies are zeroed.
    """
    _check_channel(config, channel)
    n = config.pupil_resolution_px
    lam = wavelength_um(config, channel)
    z = config.sensor_distance_m * 1e6
    freqs = fft.fftfreq(n, d=config.pupil_pitch_um)
    fy, fx = np.meshgrid(freqs, freqs, indexing="ij")
    f2 = fx ** 2 + fy ** 2
    propagating = lam ** 2 * f2 < 1.0
    return np.where(propagating, np.exp(1j * math.pi * lam * z * f2), 0.0)


@functools.lru_cache(maxsize=16)
def _channel_factors(config: OpticsConfig, channel: int):
    grid = get_grid(config.pupil_resolution_px)
    # W is a unit plane wave, so it does not appear as a factor
    static = grid.mask * propagation_phase(config, channel) * lens_phase(config, channel)
    static.setflags(write=False)
    transfer = transfer_function(config, channel)
    transfer.setflags(write=False)
    return static, transfer


def _crop(intensity: np.ndarray, config: OpticsConfig) -> Tuple[np.ndarray, float]:
    n = config.pupil_resolution_px
    size = config.psf_crop_px
    ratio = config.sensor_pitch_um / config.pupil_pitch_um
    total = intensity.sum()
    if math.isclose(ratio, 1.0, rel_tol=1e-12):
        start = n // 2 - size // 2
        kernel = intensity[start:start + size, start:start + size].copy()
        captured = kernel.sum()
    else:
        # resample on sensor pixels, keeping the optical axis on pixel K // 2
        offsets = (np.arange(size) - size // 2) * ratio + n // 2
        rows, cols = np.meshgrid(offsets, offsets, indexing="ij")
        kernel = map_coordinates(intensity, [rows, cols], order=1, mode="constant", cval=0.0)
        captured = kernel.sum() * ratio ** 2
    loss = float(1.0 - captured / total) if total > 0 else 1.0
    return kernel, loss


def _report_crop_loss(config: OpticsConfig, channel: int, loss: float):
    # repeats for the same optics and channel go to debug
    key = (config, channel)
    level = logging.DEBUG if key in _crop_loss_reported else logging.WARNING
    _crop_loss_reported.add(key)
    logger.log(level, "PSF channel %i loses %.1f%% of its energy to the %ipx crop",
               channel, 100 * loss, config.psf_crop_px)


def compute_psf(beta: ZernikeCoefficients, config: OpticsConfig) -> PSFStack:
    """
    Render the PSF stack of a Zernike phase mask, one kernel per
    wavelength.
    """
    if beta.units != COEFFICIENT_UNITS:
        raise UnitsError(f"Coefficients are in '{beta.units}', the optics model expects '{COEFFICIENT_UNITS}'")
    if config.psf_crop_px > config.pupil_resolution_px:
        raise ConfigError(f"PSF crop {config.psf_crop_px} exceeds pupil resolution {config.pupil_resolution_px}")

    grid = get_grid(config.pupil_resolution_px)
    phi = synthesize_phase(beta, grid).phi
    kernels = []
    losses = []
    for channel in range(config.channels):
        static, transfer = _channel_factors(config, channel)
        field = static * np.exp(-1j * wavenumber(config, channel) * phi)
        spectrum = fft.fft2(fft.ifftshift(field))
        sensor_field = fft.fftshift(fft.ifft2(spectrum * transfer))
        intensity = sensor_field.real ** 2 + sensor_field.imag ** 2
        kernel, loss = _crop(intensity, config)
        total = kernel.sum()
        if not np.isfinite(total) or total <= 0:
            raise NumericalError(f"PSF channel {channel} has no energy inside the {config.psf_crop_px}px crop")
        kernels.append(kernel / total)
        losses.append(loss)
        if loss > CROP_LOSS_WARNING:
            _report_crop_loss(config, channel, loss)
    return PSFStack(np.stack(kernels), config=config, crop_loss=tuple(losses))


def defocus_coefficients(defocus_beta4: float) -> ZernikeCoefficients:
    if not math.isfinite(defocus_beta4):
        raise ValueError(f"Defocus amplitude must be finite, got {defocus_beta4}")
    beta = np.zeros(DEFOCUS_NOLL_INDEX)
    beta[DEFOCUS_NOLL_INDEX - 1] = defocus_beta4
    return ZernikeCoefficients(beta)


def defocus_psf(config: OpticsConfig, defocus_beta4: float) -> PSFStack:
    """PSF of a lens whose only aberration is Noll-4 defocus; used as the frozen ``H_f``"""
    return compute_psf(defocus_coefficients(defocus_beta4), config)


def central_energy_fraction(psf: PSFStack, window: int = 3) -> float:
    """Fraction of the PSF energy inside the central ``window x window`` pixels, averaged over channels"""
    center = psf.size // 2
    lo = center - window // 2
    block = psf.kernels[:, lo:lo + window, lo:lo + window]
    return float(block.sum() / psf.kernels.sum())


def mtf_highfreq_ratio(psf: PSFStack, cutoff: float) -> np.ndarray:
    """
    Share of MTF magnitude above ``cutoff`` (fraction of Nyquist), one value
    per channel. Lower values mean less fine detail reaches the sensor.
    """
    if not 0 < cutoff < 1:
        raise ValueError(f"cutoff must be in (0, 1), got {cutoff}")
    freqs = fft.fftfreq(psf.size)
    fy, fx = np.meshgrid(freqs, freqs, indexing="ij")
    radius = np.hypot(fx, fy) / 0.5
    high = radius > cutoff
    ratios = []
    for kernel in psf.kernels:
        mtf = np.abs(fft.fft2(kernel))
        ratios.append(mtf[high].sum() / mtf.sum())
    return np.array(ratios)


@functools.lru_cache(maxsize=8)
def calibrate_defocus(config: OpticsConfig, target_fraction: float, upper_um: float = 16.0) -> float:
    """
    Noll-4 amplitude whose PSF keeps ``target_fraction`` of its energy in the
    central 3x3 pixels. The root is bracketed by doubling from 0.125um and
    refined with Brent's method, so the first crossing is the one returned.
    """
    def excess(b):
        return central_energy_fraction(defocus_psf(config, b)) - target_fraction

    start = excess(0.0)
    if start <= 0:
        raise NumericalError(f"The aberration-free PSF already has a central energy fraction "
                             f"below {target_fraction}; cannot calibrate the defocus regularizer")
    hi = 0.125
    while excess(hi) > 0:
        hi *= 2
        if hi > upper_um:
            raise NumericalError(f"No defocus up to {upper_um}um reaches central fraction {target_fraction}")
    value = brentq(excess, hi / 2 if hi > 0.125 else 0.0, hi, xtol=1e-5)
    logger.info("Calibrated defocus regularizer: beta4=%.5fum for central fraction %.3f", value, target_fraction)
    return float(value)


def resolve_defocus_beta4(config: OpticsConfig) -> float:
    if config.defocus_beta4_um is not None:
        return config.defocus_beta4_um
    return calibrate_defocus(config, config.defocus_target_fraction)


def regularizer_psf(config: OpticsConfig) -> PSFStack:
    """The frozen defocus PSF ``H_f`` configured (or calibrated) for ``config``"""
    return defocus_psf(config, resolve_defocus_beta4(config))
