import math

import numpy as np
import pytest

from privlens.attacks import (
    AttackReport, AttackRow, attack_suite, expand_nsr_sweep, regularized_inverse, run_attack,
    unsharp_blind, wiener_deconvolve,
)
from privlens.config import AttackMethod, NoiseSpec
from privlens.errors import AttackError, ShapeMismatchError
from privlens.lenses import LowResolutionLens, PSFLens
from privlens.metrics import psnr, psnr_from_mse
from privlens.optics import PSFStack, compute_psf, defocus_psf
from privlens.sensor import capture
from privlens.task_manager import TaskManager
from tests.utils import NO_NOISE, face_batch, face_image, optimized_lens, small_optics


@pytest.fixture(scope="module")
def optics():
    return small_optics()


@pytest.fixture(scope="module")
def mild(optics):
    return defocus_psf(optics, 0.05)


def test_delta_without_regularization_is_exact():
    x = face_image(32)
    psf = PSFStack.delta(3, 9)
    y = capture(x, psf, NO_NOISE)
    np.testing.assert_array_equal(wiener_deconvolve(y, psf, 0.0), y)
    np.testing.assert_array_equal(regularized_inverse(y, psf, 1e-3), y)


def test_wiener_recovers_mild_defocus(mild):
    x = face_image(128, texture=0.03)
    y = capture(x, mild, NO_NOISE)
    x_hat = wiener_deconvolve(y, mild, 1e-4)
    assert psnr(x, x_hat) >= 35.0
    assert psnr(x, x_hat) > psnr(x, y)


def test_wiener_inverts_box_blur_in_the_interior():
    rng = np.random.default_rng(0)
    x = np.zeros((40, 40, 1))
    x[8:32, 8:32, 0] = rng.uniform(0.2, 0.8, size=(24, 24))
    kernel = np.zeros((1, 5, 5))
    kernel[0, 1:4, 1:4] = 1 / 9
    psf = PSFStack(kernel)
    y = capture(x, psf, NO_NOISE)
    x_hat = wiener_deconvolve(y, psf, 1e-9)
    np.testing.assert_allclose(x_hat, x, atol=1e-3)


def test_regularized_inverse_improves_blur(mild):
    x = face_image(64, texture=0.03)
    y = capture(x, mild, NO_NOISE)
    assert psnr(x, regularized_inverse(y, mild, 1e-2)) > psnr(x, y)


def test_wiener_rejects_bad_arguments(mild):
    y = np.zeros((16, 16, 3))
    with pytest.raises(ValueError):
        wiener_deconvolve(y, mild, -1.0)
    with pytest.raises(ValueError):
        regularized_inverse(y, mild, 0.0)
    with pytest.raises(ShapeMismatchError):
        wiener_deconvolve(np.zeros((16, 16, 1)), mild, 1e-3)


def test_unsharp_keeps_constant_images():
    y = np.full((16, 16, 3), 0.3)
    np.testing.assert_allclose(unsharp_blind(y, 2.0, 1.5), y)


def test_run_attack_needs_psf_for_non_blind():
    with pytest.raises(AttackError):
        run_attack(AttackMethod("wiener"), np.zeros((8, 8, 3)), None)
    out = run_attack(AttackMethod("unsharp_blind"), np.zeros((8, 8, 3)), None)
    assert out.shape == (8, 8, 3)


def test_expand_nsr_sweep():
    methods = expand_nsr_sweep([AttackMethod("wiener", nsr=1e-3), AttackMethod("unsharp_blind")],
                               [1e-3, 1e-2, 1e-2, 1e-1])
    labels = [m.label for m in methods]
    assert labels == ["wiener(nsr=0.001)", "unsharp_blind(radius=2,amount=1.5)",
                      "wiener(nsr=0.01)", "wiener(nsr=0.1)"]


def test_stronger_regularization_loses_detail(mild):
    x = face_image(64)
    y = capture(x, mild, NO_NOISE)
    scores = [psnr(x, wiener_deconvolve(y, mild, nsr)) for nsr in (1e-4, 1e-2, 1.0)]
    assert scores[0] > scores[1] > scores[2]


@pytest.mark.slow
def test_optimized_lens_resists_attacks(optics, mild):
    beta, _ = optimized_lens()
    lenses = [
        PSFLens("delta", PSFStack.delta(3, optics.psf_crop_px), kind="delta"),
        PSFLens("mild", mild, kind="defocus"),
        PSFLens("optimized", compute_psf(beta, optics), coefficients=beta, kind="zernike"),
        LowResolutionLens("lowres-16", size_px=16),
    ]
    dataset = [(f"face_{i}", face_image(32, seed=i, texture=0.03)) for i in range(8)]
    wiener, unsharp = AttackMethod("wiener", nsr=1e-3), AttackMethod("unsharp_blind")
    report = attack_suite(dataset, lenses, [wiener, unsharp], NoiseSpec(sigma=0.01, seed=3))

    def mean(lens, method):
        return report.aggregate(lens, method.label).psnr_mean

    assert mean("delta", wiener) > mean("mild", wiener) > mean("optimized", wiener)
    assert mean("mild", wiener) - mean("optimized", wiener) >= 5.0
    assert mean("optimized", unsharp) < mean("lowres-16", unsharp)


def test_lowres_lens_rows():
    dataset = [("a", face_image(32, seed=1)), ("b", face_image(32, seed=2))]
    lens = LowResolutionLens("lowres", size_px=8)
    methods = [AttackMethod("unsharp_blind"), AttackMethod("wiener")]
    report = attack_suite(dataset, [lens], methods, NO_NOISE)
    assert len(report.rows) == 4
    blind = [r for r in report.rows if r.method.startswith("unsharp_blind")]
    assert all(r.ok and math.isfinite(r.psnr) for r in blind)
    failed = [r for r in report.rows if r.method.startswith("wiener")]
    assert all(not r.ok and r.status == "/attack/wiener" for r in failed)
    assert report.successes == 2
    assert report.failures == 2
    aggregate = report.aggregate("lowres", "wiener(nsr=0.001)")
    assert aggregate.failures == 2
    assert math.isnan(aggregate.psnr_mean)


def test_lowres_capture_is_blocky():
    lens = LowResolutionLens("lowres", size_px=8)
    y = lens.capture(face_image(32), NO_NOISE)
    assert y.shape == (32, 32, 3)
    np.testing.assert_array_equal(y[:4, :4], np.broadcast_to(y[0, 0], (4, 4, 3)))


def test_rows_are_consistent_and_sorted(mild):
    dataset = [("b", face_image(32, seed=1)), ("a", face_image(32, seed=2))]
    lenses = [PSFLens("z-lens", mild), PSFLens("a-lens", mild)]
    methods = [AttackMethod("wiener", nsr=1e-2), AttackMethod("regularized_inverse")]
    report = attack_suite(dataset, lenses, methods, NoiseSpec(sigma=0.01, seed=1))
    keys = [(r.lens, r.method, r.image) for r in report.rows]
    assert keys == sorted(keys)
    for row in report.rows:
        assert row.psnr == pytest.approx(psnr_from_mse(row.mse))
        assert -1.0 <= row.ssim <= 1.0


def test_suite_is_deterministic_across_workers(mild):
    dataset = [(f"img{i}", image) for i, image in enumerate(face_batch(3, size=32))]
    lenses = [PSFLens("mild", mild)]
    methods = [AttackMethod("wiener", nsr=1e-3)]
    noise = NoiseSpec(sigma=0.02, seed=7)
    serial = attack_suite(dataset, lenses, methods, noise)
    threaded = attack_suite(dataset, lenses, methods, noise, task_manager=TaskManager(max_workers=3))
    assert serial.rows == threaded.rows


def test_keep_images(mild):
    report = attack_suite([("a", face_image(32))], [PSFLens("mild", mild)],
                          [AttackMethod("wiener")], NO_NOISE, keep_images=True)
    assert set(report.recovered) == {("mild", "wiener(nsr=0.001)", "a")}


def test_aggregate_means():
    report = AttackReport([
        AttackRow("l", "m", "a", 10.0, 0.1, 0.5),
        AttackRow("l", "m", "b", 20.0, 0.01, 0.7),
        AttackRow("l", "m", "c", math.nan, math.nan, math.nan, "AttackError"),
    ])
    aggregate = report.aggregate("l", "m")
    assert aggregate.images == 3
    assert aggregate.failures == 1
    assert aggregate.psnr_mean == pytest.approx(15.0)
    assert aggregate.ssim_mean == pytest.approx(0.6)
    with pytest.raises(KeyError):
        report.aggregate("l", "other")


def test_suite_rejects_empty_inputs(mild):
    with pytest.raises(ValueError):
        attack_suite([], [PSFLens("mild", mild)], [AttackMethod("wiener")], NO_NOISE)
