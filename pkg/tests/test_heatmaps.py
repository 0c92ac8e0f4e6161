import numpy as np
import pytest

from privlens.errors import ShapeMismatchError
from privlens.heatmaps import (
    LowpassHeatmapProxy, hmap_loss, landmark_heatmap_oracle, lowpass_heatmap_proxy, luminance,
)
from privlens.optics import PSFStack, defocus_psf
from privlens.sensor import capture
from tests.utils import NO_NOISE, face_image, small_optics


def test_luminance():
    image = np.zeros((2, 2, 3))
    image[..., 1] = 1.0
    np.testing.assert_allclose(luminance(image), 0.587)
    assert luminance(np.ones((3, 3))).shape == (3, 3)


def test_constant_image_gives_zero_proxy():
    assert not lowpass_heatmap_proxy(np.full((16, 16, 3), 0.4), 0.1).any()


def test_proxy_range():
    heatmap = LowpassHeatmapProxy(0.2)(face_image(32))
    assert heatmap.shape == (32, 32)
    assert heatmap.min() == pytest.approx(0.0)
    assert heatmap.max() == pytest.approx(1.0)


@pytest.mark.parametrize("cutoff", [0.0, 1.0, -0.5])
def test_proxy_rejects_cutoff(cutoff):
    with pytest.raises(ValueError):
        LowpassHeatmapProxy(cutoff)


def test_oracle_empty_landmarks():
    heatmap = landmark_heatmap_oracle([], (8, 10), 2.0)
    assert heatmap.shape == (8, 10)
    assert not heatmap.any()


def test_oracle_single_landmark_peak():
    heatmap = landmark_heatmap_oracle([(5, 3)], (8, 10), 1.5)
    assert heatmap[3, 5] == 1.0
    assert np.unravel_index(np.argmax(heatmap), heatmap.shape) == (3, 5)
    assert heatmap[3, 6] == pytest.approx(np.exp(-1 / (2 * 1.5 ** 2)))


def test_oracle_is_max_of_blobs():
    points = [(2.0, 2.0), (4.5, 3.0)]
    heatmap = landmark_heatmap_oracle(points, (6, 7), 1.0)
    for r in range(6):
        for c in range(7):
            expected = max(np.exp(-((c - x) ** 2 + (r - y) ** 2) / 2.0) for x, y in points)
            assert heatmap[r, c] == pytest.approx(expected)


def test_oracle_rejects_outside_landmark():
    with pytest.raises(ValueError):
        landmark_heatmap_oracle([(10, 0)], (8, 10), 1.0)


def test_hmap_loss_is_a_distance():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(size=(2, 8, 8))
    assert hmap_loss(a, a) == 0.0
    assert hmap_loss(a, b) == hmap_loss(b, a)
    assert hmap_loss(a, b) > 0
    assert hmap_loss(np.zeros((4, 4)), np.ones((4, 4))) == 1.0
    with pytest.raises(ShapeMismatchError):
        hmap_loss(a, np.zeros((4, 4)))


def test_delta_capture_keeps_proxy():
    x = face_image(48)
    proxy = LowpassHeatmapProxy(0.1)
    y = capture(x, PSFStack.delta(3, 9), NO_NOISE)
    np.testing.assert_allclose(proxy(y), proxy(x), atol=1e-12)


def test_stronger_blur_moves_proxy_further():
    x = face_image(64)
    proxy = LowpassHeatmapProxy(0.1)
    reference = proxy(x)
    optics = small_optics()
    distances = [hmap_loss(proxy(capture(x, defocus_psf(optics, b), NO_NOISE)), reference)
                 for b in (0.0, 0.4)]
    assert distances[0] < distances[1]
