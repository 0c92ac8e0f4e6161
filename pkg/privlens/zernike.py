"""
Zernike polynomials in Noll's single-index notation and synthesis of a
discretized phase mask from a coefficient vector.

The surface height of the mask is ``phi = sum_j beta_j * Q_j`` in
micrometers, where ``Q_j`` is the Noll-normalized Zernike term evaluated on
the unit pupil disk.
"""
import functools
import logging
import math
from typing import Sequence, Tuple

import attr
import numpy as np
from scipy.special import factorial as fac

from .errors import ConfigError, UnitsError

logger = logging.getLogger(__name__)

COEFFICIENT_UNITS = "um"


def noll_to_nm(j: int) -> Tuple[int, int]:
    """
    Convert a Noll index to the ``(n, m)`` pair of radial order and signed
    azimuthal frequency. Even ``j`` carry the cosine (``m > 0``) terms and
    odd ``j`` the sine (``m < 0``) terms.

    >>> [noll_to_nm(j) for j in range(1, 7)]
    [(0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2)]
    >>> noll_to_nm(11)
    (4, 0)
    """
    if not isinstance(j, (int, np.integer)) or isinstance(j, bool) or j < 1:
        raise ValueError(f"Noll indices start at 1, got {j!r}")
    n = 0
    j1 = j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * int((j1 + ((n + 1) % 2)) / 2.0))
    return n, m


@attr.s(auto_attribs=True, frozen=True)
class NollIndex:
    j: int
    n: int
    m: int

    @classmethod
    def from_j(cls, j: int) -> "NollIndex":
        n, m = noll_to_nm(j)
        return cls(j=j, n=n, m=m)

    @property
    def normalization(self) -> float:
        if self.m == 0:
            return math.sqrt(self.n + 1)
        return math.sqrt(2 * (self.n + 1))


def radial_polynomial(n: int, m_abs: int, rho):
    """
    Radial Zernike polynomial ``R_n^m`` on ``rho`` (scalar or array).

    >>> radial_polynomial(2, 0, 0.5)
    -0.5
    >>> radial_polynomial(0, 0, 0.7)
    1.0
    """
    if m_abs < 0 or m_abs > n:
        raise ValueError(f"Invalid radial indices n={n}, m={m_abs}")
    if (n - m_abs) % 2:
        raise ValueError(f"n - m must be even, got n={n}, m={m_abs}")

    rho = np.asarray(rho, dtype=float)
    result = np.zeros_like(rho)
    for k in range((n - m_abs) // 2 + 1):
        coef = (-1.0) ** k * fac(n - k) / (
            fac(k) * fac((n + m_abs) // 2 - k) * fac((n - m_abs) // 2 - k))
        result = result + coef * rho ** (n - 2 * k)
    if result.ndim == 0:
        return float(result)
    return result


def zernike_term(j: int, rho, theta):
    """
    Noll-normalized Zernike term ``Q_j`` at polar coordinates. No aperture
    masking is applied here.
    """
    idx = NollIndex.from_j(j)
    radial = radial_polynomial(idx.n, abs(idx.m), rho)
    if idx.m > 0:
        angular = np.cos(idx.m * np.asarray(theta, dtype=float))
    elif idx.m < 0:
        angular = np.sin(-idx.m * np.asarray(theta, dtype=float))
    else:
        angular = 1.0
    return idx.normalization * radial * angular


@attr.s(auto_attribs=True, frozen=True, eq=False)
class UnitDiskGrid:
    """
    Square sampling of the normalized pupil plane. Pixel ``(N/2, N/2)`` is
    the origin, so the grid spans ``[-1, 1)`` on both axes and lines up
    with the FFT center after shifting. The aperture mask keeps points
    strictly inside the unit circle, which makes it symmetric under the
    reflection ``i -> N - i`` about the center pixel.
    """
    resolution: int
    u: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    mask: np.ndarray

    @classmethod
    def create(cls, resolution: int) -> "UnitDiskGrid":
        if resolution < 2:
            raise ConfigError(f"Invalid grid resolution: {resolution}")
        half = resolution / 2.0
        axis = (np.arange(resolution) - resolution // 2) / half
        # rows are v, columns are u
        v, u = np.meshgrid(axis, axis, indexing="ij")
        rho = np.hypot(u, v)
        theta = np.arctan2(v, u)
        mask = u ** 2 + v ** 2 < 1.0
        arrays = [u, v, rho, theta, mask]
        for arr in arrays:
            arr.setflags(write=False)
        return cls(resolution, *arrays)


@functools.lru_cache(maxsize=8)
def get_grid(resolution: int) -> UnitDiskGrid:
    return UnitDiskGrid.create(resolution)


def evaluate_basis(j: int, grid: UnitDiskGrid) -> np.ndarray:
    """``Q_j`` sampled on the grid, exactly zero outside the aperture"""
    values = zernike_term(j, grid.rho, grid.theta)
    return np.where(grid.mask, values, 0.0)


@functools.lru_cache(maxsize=4)
def basis_stack(resolution: int, p: int) -> np.ndarray:
    grid = get_grid(resolution)
    stack = np.stack([evaluate_basis(j, grid) for j in range(1, p + 1)])
    stack.setflags(write=False)
    return stack


def _as_beta(values) -> np.ndarray:
    beta = np.array(values, dtype=float).reshape(-1)
    if beta.size < 1:
        raise ValueError("At least one Zernike coefficient is required")
    if not np.all(np.isfinite(beta)):
        bad = [i + 1 for i in np.flatnonzero(~np.isfinite(beta))]
        raise ValueError(f"Non-finite Zernike coefficients at Noll indices {bad}")
    beta.setflags(write=False)
    return beta


@attr.s(frozen=True, eq=False)
class ZernikeCoefficients:
    """Surface-sag amplitudes ``beta_j`` in Noll order; index ``i`` is ``j = i + 1``"""
    beta: np.ndarray = attr.ib(converter=_as_beta)
    units: str = attr.ib(default=COEFFICIENT_UNITS)

    @property
    def p(self) -> int:
        return int(self.beta.size)

    @classmethod
    def zeros(cls, p: int) -> "ZernikeCoefficients":
        return cls(np.zeros(p))

    @classmethod
    def from_mapping(cls, values: dict, p: int = None) -> "ZernikeCoefficients":
        """Build from ``{j: beta_j}``; missing indices are zero"""
        if any(int(j) < 1 for j in values):
            raise ValueError(f"Noll indices start at 1: {sorted(values)}")
        p = p or max(int(j) for j in values)
        beta = np.zeros(p)
        for j, value in values.items():
            if int(j) > p:
                raise ValueError(f"Noll index {j} exceeds p={p}")
            beta[int(j) - 1] = value
        return cls(beta)

    def with_beta(self, beta: Sequence[float]) -> "ZernikeCoefficients":
        return ZernikeCoefficients(beta, units=self.units)

    def __eq__(self, other):
        if not isinstance(other, ZernikeCoefficients):
            return NotImplemented
        return self.units == other.units and np.array_equal(self.beta, other.beta)

    def __repr__(self):
        values = ", ".join(f"{b:.4g}" for b in self.beta)
        return f"ZernikeCoefficients([{values}], units={self.units!r})"


@attr.s(auto_attribs=True, frozen=True, eq=False)
class PhaseMask:
    phi: np.ndarray
    grid: UnitDiskGrid


def synthesize_phase(beta: ZernikeCoefficients, grid: UnitDiskGrid) -> PhaseMask:
    """
    Surface height ``phi = sum_j beta_j Q_j`` (micrometers) on the grid.
    Linear in ``beta``.
    """
    if beta.units != COEFFICIENT_UNITS:
        raise UnitsError(f"Zernike coefficients must be in '{COEFFICIENT_UNITS}', got '{beta.units}'")
    stack = basis_stack(grid.resolution, beta.p)
    phi = np.tensordot(beta.beta, stack, axes=1)
    return PhaseMask(phi=phi, grid=grid)
