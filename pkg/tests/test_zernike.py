import math

import numpy as np
import pytest

from privlens.errors import UnitsError
from privlens.zernike import (NollIndex, ZernikeCoefficients, basis_stack, evaluate_basis, get_grid, noll_to_nm,
                              radial_polynomial, synthesize_phase, zernike_term)


def noll_enumeration(jmax):
    """Noll ordering by construction: radial order first, then |m|; even j take m > 0"""
    out = {}
    j, n = 1, 0
    while j <= jmax:
        for m in range(n % 2, n + 1, 2):
            if m == 0:
                out[j] = (n, 0)
                j += 1
            else:
                for jj in (j, j + 1):
                    out[jj] = (n, m if jj % 2 == 0 else -m)
                j += 2
        n += 1
    return out


def test_noll_matches_enumeration():
    expected = noll_enumeration(36)
    for j in range(1, 37):
        assert noll_to_nm(j) == expected[j], j


@pytest.mark.parametrize("j", [0, -1, 1.5, True])
def test_noll_rejects_invalid(j):
    with pytest.raises(ValueError):
        noll_to_nm(j)


@pytest.mark.parametrize("j, norm", [(1, 1.0), (2, 2.0), (4, math.sqrt(3)), (6, math.sqrt(6)), (11, math.sqrt(5))])
def test_normalization(j, norm):
    assert NollIndex.from_j(j).normalization == pytest.approx(norm)


def test_radial_polynomial_known_values():
    rho = np.linspace(0, 1, 11)
    np.testing.assert_allclose(radial_polynomial(2, 0, rho), 2 * rho ** 2 - 1)
    np.testing.assert_allclose(radial_polynomial(3, 1, rho), 3 * rho ** 3 - 2 * rho)
    np.testing.assert_allclose(radial_polynomial(4, 0, rho), 6 * rho ** 4 - 6 * rho ** 2 + 1)
    assert radial_polynomial(4, 4, 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("n, m", [(2, 1), (1, 3), (2, -2)])
def test_radial_polynomial_invalid(n, m):
    with pytest.raises(ValueError):
        radial_polynomial(n, m, 0.5)


def test_zernike_terms():
    assert zernike_term(1, 0.3, 1.0) == pytest.approx(1.0)
    # tilt along x: 2 rho cos(theta)
    assert zernike_term(2, 0.5, 0.0) == pytest.approx(1.0)
    assert zernike_term(3, 0.5, math.pi / 2) == pytest.approx(1.0)
    # defocus: sqrt(3) (2 rho^2 - 1)
    assert zernike_term(4, 1.0, 0.3) == pytest.approx(math.sqrt(3))


def test_grid_layout():
    grid = get_grid(16)
    assert grid.rho[8, 8] == 0.0
    assert grid.u[8, 0] == -1.0 and grid.v[0, 8] == -1.0
    assert grid.u[8, 12] == pytest.approx(0.5)
    assert grid.v[12, 8] == pytest.approx(0.5)
    # strict inequality keeps the mask symmetric about the center pixel
    assert not grid.mask[8, 0]
    inner = grid.mask[1:, 1:]
    np.testing.assert_array_equal(inner, inner[::-1, :])
    np.testing.assert_array_equal(inner, inner[:, ::-1])
    with pytest.raises(ValueError):
        grid.u[0, 0] = 1.0


def test_discrete_orthogonality():
    grid = get_grid(256)
    stack = basis_stack(256, 15)[:, grid.mask]
    gram = stack @ stack.T
    norms = np.sqrt(np.diag(gram))
    normalized = np.abs(gram) / np.outer(norms, norms)
    off_diagonal = normalized[~np.eye(15, dtype=bool)]
    assert off_diagonal.max() < 1e-2


def test_basis_is_zero_outside_aperture():
    grid = get_grid(32)
    values = evaluate_basis(7, grid)
    assert np.all(values[~grid.mask] == 0.0)


def test_coefficients_validation():
    with pytest.raises(ValueError):
        ZernikeCoefficients([0.0, math.nan])
    with pytest.raises(ValueError):
        ZernikeCoefficients([])
    beta = ZernikeCoefficients.from_mapping({4: -0.83, 6: -0.31}, p=15)
    assert beta.p == 15
    assert beta.beta[3] == -0.83 and beta.beta[5] == -0.31
    assert beta == ZernikeCoefficients(beta.beta.copy())
    assert ZernikeCoefficients.zeros(3) == ZernikeCoefficients([0, 0, 0])
    with pytest.raises(ValueError):
        ZernikeCoefficients.from_mapping({0: 1.0})
    with pytest.raises(ValueError):
        beta.beta[0] = 1.0


def test_synthesize_phase_is_linear():
    grid = get_grid(32)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=10), rng.normal(size=10)
    pa = synthesize_phase(ZernikeCoefficients(a), grid).phi
    pb = synthesize_phase(ZernikeCoefficients(b), grid).phi
    pab = synthesize_phase(ZernikeCoefficients(a + 2 * b), grid).phi
    np.testing.assert_allclose(pab, pa + 2 * pb, atol=1e-12)


def test_synthesize_phase_units():
    grid = get_grid(16)
    with pytest.raises(UnitsError):
        synthesize_phase(ZernikeCoefficients([1.0], units="nm"), grid)
