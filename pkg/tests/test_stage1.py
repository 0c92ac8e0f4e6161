import attr
import numpy as np
import pytest

from privlens.config import NoiseSpec, Stage1Hyper
from privlens.errors import NumericalError, OptimizationDiverged, ShapeMismatchError
from privlens.optics import PSFStack, compute_psf, mtf_highfreq_ratio, regularizer_psf
from privlens.stage1 import (
    Extractors, OptimizationTrace, Stage1Sample, TraceRecord, evaluate_stage1, fd_gradient,
    initial_coefficients, optics_loss, optimize_lens, psf_distance, stage1_objective,
)
from privlens.task_manager import TaskManager
from privlens.zernike import ZernikeCoefficients
from tests.utils import NO_NOISE, face_batch, face_landmarks, optimized_lens, small_optics

HYPER = Stage1Hyper(iterations=3, batch_size=4, num_coefficients=6, log_every=1)


@pytest.fixture(scope="module")
def optics():
    return small_optics()


@pytest.fixture(scope="module")
def hf(optics):
    return regularizer_psf(optics)


@pytest.fixture(scope="module")
def batch():
    return [Stage1Sample(image, image_id=i) for i, image in enumerate(face_batch(4))]


def test_optics_loss_examples():
    x = np.zeros((4, 4, 3))
    delta = PSFStack.delta(3, 5)
    assert optics_loss(x, x, delta, delta, 0.5) == 1.0
    assert optics_loss(x, np.ones((4, 4, 3)), delta, delta, 0.5) == 0.0
    y = np.full((4, 4, 3), np.sqrt(0.05))
    assert optics_loss(x, y, delta, delta, 0.5) == pytest.approx(0.95)


def test_psf_distance():
    a = PSFStack.delta(3, 5)
    b = PSFStack(np.full((3, 5, 5), 1 / 25))
    assert psf_distance(a, a) == 0.0
    expected = np.sqrt(3 * ((1 - 1 / 25) ** 2 + 24 / 25 ** 2))
    assert psf_distance(a, b) == pytest.approx(expected)
    assert psf_distance(a.kernels, b) == psf_distance(b, a)
    with pytest.raises(ShapeMismatchError):
        psf_distance(a, PSFStack.delta(3, 7))


def test_alpha2_zero_reduces_to_optics_loss(batch, optics, hf):
    beta = ZernikeCoefficients([0.0, 0.02, -0.01, 0.1])
    hyper = attr.evolve(HYPER, alpha2=0.0)
    terms = evaluate_stage1(batch, beta, optics, Extractors.proxies(0.1), hyper, NO_NOISE, hf)
    assert terms.total == terms.l_optics
    assert terms.l_hmap > 0
    penalty = hyper.alpha1 * psf_distance(compute_psf(beta, optics), hf)
    assert terms.l_optics == pytest.approx(1.0 - terms.mse_mean + penalty)


def test_landmarks_replace_reference_heatmap(optics, hf):
    image = face_batch(1)[0]
    with_landmarks = [Stage1Sample(image, landmarks=tuple(face_landmarks(64)))]
    without = [Stage1Sample(image)]
    beta = ZernikeCoefficients([0.0, 0.0, 0.0, 0.1])
    extractors = Extractors.proxies(0.1)
    a = evaluate_stage1(with_landmarks, beta, optics, extractors, HYPER, NO_NOISE, hf)
    b = evaluate_stage1(without, beta, optics, extractors, HYPER, NO_NOISE, hf)
    assert a.l_optics == b.l_optics
    assert a.l_hmap != b.l_hmap


def test_fd_gradient_quadratic():
    def objective(b):
        return float(np.sum((b - 1.0) ** 2) + 3 * b[0] * b[1])

    beta = np.array([0.5, -0.25, 2.0])
    grad = fd_gradient(objective, beta, 1e-3)
    expected = 2 * (beta - 1.0) + np.array([3 * beta[1], 3 * beta[0], 0.0])
    np.testing.assert_allclose(grad, expected, atol=1e-8)


def test_fd_gradient_constant_and_indices():
    np.testing.assert_array_equal(fd_gradient(lambda b: 4.0, np.ones(3), 1e-3), np.zeros(3))
    grad = fd_gradient(lambda b: float(b.sum()), np.zeros(4), 1e-3, indices=[1, 3])
    np.testing.assert_allclose(grad, [0, 1, 0, 1])


def test_fd_gradient_on_task_manager():
    def objective(b):
        return float(np.sum(b ** 3))

    beta = np.array([0.1, 0.2, 0.3])
    with_pool = fd_gradient(objective, beta, 1e-3, task_manager=TaskManager(max_workers=3))
    np.testing.assert_array_equal(with_pool, fd_gradient(objective, beta, 1e-3))


def test_fd_gradient_non_finite():
    def objective(b):
        return float("nan") if b[2] > 0 else 0.0

    with pytest.raises(NumericalError) as info:
        fd_gradient(objective, np.zeros(3), 1e-3)
    assert "[2]" in str(info.value)
    with pytest.raises(ValueError):
        fd_gradient(objective, np.zeros(3), 0.0)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_fd_gradient_converges_with_step(batch, optics, hf, seed):
    beta = initial_coefficients(6, 0.05, seed).beta
    extractors = Extractors.proxies(0.1)

    def objective(b):
        return stage1_objective(batch, ZernikeCoefficients(b), optics, extractors, HYPER, NO_NOISE, hf)

    coarse = fd_gradient(objective, beta, 1e-3, indices=range(1, 6))
    fine = fd_gradient(objective, beta, 5e-4, indices=range(1, 6))
    assert np.linalg.norm(coarse) > 0
    assert np.linalg.norm(coarse - fine) <= 0.02 * np.linalg.norm(fine) + 1e-6

    step = -fine / np.linalg.norm(fine) * 1e-3
    assert objective(beta + step) < objective(beta)


def test_piston_does_not_change_objective(batch, optics, hf):
    extractors = Extractors.proxies(0.1)
    base = [0.0, 0.03, 0.0, 0.1]
    shifted = [0.7, 0.03, 0.0, 0.1]
    a = stage1_objective(batch, ZernikeCoefficients(base), optics, extractors, HYPER, NO_NOISE, hf)
    b = stage1_objective(batch, ZernikeCoefficients(shifted), optics, extractors, HYPER, NO_NOISE, hf)
    assert a == pytest.approx(b, abs=1e-9)


def test_initial_coefficients():
    beta = initial_coefficients(15, 0.05, seed=3)
    assert beta.p == 15
    assert beta.beta[0] == 0.0
    assert beta == initial_coefficients(15, 0.05, seed=3)
    assert beta != initial_coefficients(15, 0.05, seed=4)


def test_zero_iterations_returns_initial(batch, optics):
    start = ZernikeCoefficients([0.0, 0.1, 0.2])
    beta, trace = optimize_lens(batch, optics, attr.evolve(HYPER, iterations=0), initial_beta=start)
    assert beta == start
    assert len(trace) == 0


def test_optimize_is_deterministic(batch, optics, hf):
    noise = NoiseSpec(sigma=0.01, seed=2)
    first = optimize_lens(batch, optics, HYPER, noise=noise, seed=5, hf=hf)
    second = optimize_lens(batch, optics, HYPER, noise=noise, seed=5, hf=hf)
    assert first[0] == second[0]
    assert [r.total for r in first[1]] == [r.total for r in second[1]]
    assert len(first[1]) == HYPER.iterations
    assert first[1].records[0].beta[0] == 0.0


def test_optimize_returns_best_iterate(batch, optics, hf):
    beta, trace = optimize_lens(batch, optics, HYPER, noise=NO_NOISE, seed=1, hf=hf)
    best = trace.best()
    assert tuple(beta.beta) == best.beta
    assert best.total == min(r.total for r in trace)


def test_optimize_minibatches(optics, hf):
    dataset = [Stage1Sample(image, image_id=i) for i, image in enumerate(face_batch(6, size=32))]
    hyper = attr.evolve(HYPER, batch_size=2, iterations=2)
    beta, trace = optimize_lens(dataset, optics, hyper, noise=NO_NOISE, seed=1, hf=hf)
    assert len(trace) == 2


def test_trace_best_prefers_earliest():
    trace = OptimizationTrace()
    for t, total in enumerate([3.0, 1.0, 2.0, 1.0]):
        trace.append(TraceRecord(t, total, 0.0, total, (0.0,), 0.0))
    assert trace.best().iteration == 1
    assert OptimizationTrace().best() is None


def test_divergence_is_reported(batch, optics, hf, mocker):
    mocker.patch("privlens.stage1.fd_gradient", return_value=np.full(6, np.inf))
    with pytest.raises(OptimizationDiverged) as info:
        optimize_lens(batch, optics, HYPER, noise=NO_NOISE, seed=1, hf=hf)
    assert info.value.iteration == 1
    assert len(info.value.trace) == 1


def test_non_finite_gradient_is_divergence(batch, optics, hf, mocker):
    mocker.patch("privlens.stage1.fd_gradient", side_effect=NumericalError("boom"))
    with pytest.raises(OptimizationDiverged) as info:
        optimize_lens(batch, optics, HYPER, noise=NO_NOISE, seed=1, hf=hf)
    assert info.value.iteration == 0


@pytest.mark.slow
def test_default_run_blurs_the_lens(optics):
    beta, trace = optimized_lens()
    assert len(trace) == Stage1Hyper().iterations
    first, best = trace.records[0], trace.best()
    assert best.total < first.total
    assert best.mse_mean >= 2 * first.mse_mean
    np.testing.assert_array_equal(beta.beta, best.beta)
    initial = compute_psf(ZernikeCoefficients(first.beta), optics)
    final = compute_psf(beta, optics)
    assert mtf_highfreq_ratio(final, 0.5).mean() < mtf_highfreq_ratio(initial, 0.5).mean()
