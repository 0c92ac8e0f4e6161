"""
Stage I: optimize the Zernike coefficients of the lens so that captures
lose detail (large MSE to the scene) while a heatmap regressor still finds
the face geometry. The objective is::

    L_optics + alpha2 * L_hmap
    L_optics = mean(1 - MSE(x, y)) + alpha1 * ||H - H_f||
    L_hmap   = mean(|U(y) - U*(x)|)

Gradients are central finite differences over the coefficients, with the
sensor noise frozen inside one gradient evaluation.
"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import attr
import numpy as np

from .config import NoiseSpec, OpticsConfig, Stage1Hyper
from .errors import NumericalError, OptimizationDiverged, ShapeMismatchError
from .heatmaps import HeatmapExtractor, LowpassHeatmapProxy, hmap_loss, landmark_heatmap_oracle
from .optics import PSFStack, compute_psf, regularizer_psf
from .sensor import as_image, capture, mse
from .task_manager import TaskManager
from .utils import derive_seed
from .zernike import ZernikeCoefficients

__all__ = [
    "Stage1Sample", "Extractors", "Stage1Terms", "TraceRecord", "OptimizationTrace",
    "psf_distance", "optics_loss", "hmap_loss", "evaluate_stage1", "stage1_objective",
    "fd_gradient", "initial_coefficients", "optimize_lens",
]

logger = logging.getLogger(__name__)


@attr.s(auto_attribs=True, frozen=True, eq=False)
class Stage1Sample:
    """A training image, its optional ``(x, y)`` landmarks and the id keying its noise stream"""
    image: np.ndarray = attr.ib(converter=as_image)
    landmarks: Optional[Tuple[Tuple[float, float], ...]] = None
    image_id: int = 0


@attr.s(auto_attribs=True, frozen=True)
class Extractors:
    """The heatmap regressor ``U`` applied to captures and the frozen ``U*`` applied to scenes"""
    u: HeatmapExtractor
    u_star: HeatmapExtractor

    @classmethod
    def proxies(cls, cutoff: float) -> "Extractors":
        proxy = LowpassHeatmapProxy(cutoff)
        return cls(proxy, proxy)


@attr.s(auto_attribs=True, frozen=True)
class Stage1Terms:
    l_optics: float
    l_hmap: float
    total: float
    mse_mean: float


@attr.s(auto_attribs=True, frozen=True)
class TraceRecord:
    iteration: int
    l_optics: float
    l_hmap: float
    total: float
    beta: Tuple[float, ...]
    mse_mean: float


@attr.s(auto_attribs=True)
class OptimizationTrace:
    records: List[TraceRecord] = attr.ib(factory=list)

    def append(self, record: TraceRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def best(self) -> Optional[TraceRecord]:
        """Lowest total; the earliest iterate wins ties"""
        best = None
        for record in self.records:
            if best is None or record.total < best.total:
                best = record
        return best


def _kernels(psf) -> np.ndarray:
    if isinstance(psf, PSFStack):
        return psf.kernels
    return np.asarray(psf, dtype=np.float64)


def psf_distance(H, Hf) -> float:
    """Frobenius norm of ``H - Hf`` over every kernel entry of every channel"""
    a, b = _kernels(H), _kernels(Hf)
    if a.shape != b.shape:
        raise ShapeMismatchError("PSF stacks", a.shape, b.shape)
    return float(np.linalg.norm((a - b).ravel()))


def optics_loss(x, y, H, Hf, alpha1: float) -> float:
    """``1 - MSE(x, y) + alpha1 * ||H - Hf||`` for one scene/capture pair"""
    return 1.0 - mse(x, y) + alpha1 * psf_distance(H, Hf)


def reference_heatmap(sample: Stage1Sample, extractors: Extractors, sigma_px: float) -> np.ndarray:
    if sample.landmarks is not None:
        return landmark_heatmap_oracle(sample.landmarks, sample.image.shape, sigma_px)
    return extractors.u_star(sample.image)


def evaluate_stage1(batch: Sequence[Stage1Sample], beta: ZernikeCoefficients, optics: OpticsConfig,
                    extractors: Extractors, hyper: Stage1Hyper, noise: NoiseSpec, hf: PSFStack,
                    targets: Sequence[np.ndarray] = None) -> Stage1Terms:
    """
    Batch-averaged Stage I terms for the lens ``beta``. ``targets`` are the
    precomputed ``U*(x)`` heatmaps; they do not depend on the lens.
    """
    if not batch:
        raise ValueError("Stage I needs a non-empty batch")
    if targets is None:
        targets = [reference_heatmap(s, extractors, hyper.landmark_sigma_px) for s in batch]
    psf = compute_psf(beta, optics)
    penalty = hyper.alpha1 * psf_distance(psf, hf)
    mses, hmaps = [], []
    for sample, target in zip(batch, targets):
        y = capture(sample.image, psf, noise, sample.image_id)
        mses.append(mse(sample.image, y))
        hmaps.append(hmap_loss(extractors.u(y), target))
    mse_mean = float(np.mean(mses))
    l_optics = 1.0 - mse_mean + penalty
    l_hmap = float(np.mean(hmaps))
    return Stage1Terms(l_optics, l_hmap, l_optics + hyper.alpha2 * l_hmap, mse_mean)


def stage1_objective(batch: Sequence[Stage1Sample], beta: ZernikeCoefficients, optics: OpticsConfig,
                     extractors: Extractors, hyper: Stage1Hyper, noise: NoiseSpec,
                     hf: PSFStack = None) -> float:
    if hf is None:
        hf = regularizer_psf(optics)
    return evaluate_stage1(batch, beta, optics, extractors, hyper, noise, hf).total


def fd_gradient(objective: Callable[[np.ndarray], float], beta, h: float,
                indices: Sequence[int] = None, task_manager: TaskManager = None) -> np.ndarray:
    """
    Central-difference gradient ``(L(b + h e_j) - L(b - h e_j)) / 2h``.
    Only ``indices`` are differentiated (the others stay zero); the ``2p``
    evaluations run on ``task_manager`` when given.
    """
    if not h > 0:
        raise ValueError(f"Finite-difference step must be > 0, got {h}")
    beta = np.asarray(beta, dtype=np.float64)
    indices = list(range(beta.size)) if indices is None else list(indices)
    candidates = []
    for j in indices:
        for sign in (1.0, -1.0):
            shifted = beta.copy()
            shifted[j] += sign * h
            candidates.append(shifted)
    if task_manager is not None:
        values = task_manager.map(objective, candidates)
    else:
        values = [objective(c) for c in candidates]

    grad = np.zeros_like(beta)
    bad = []
    for k, j in enumerate(indices):
        plus, minus = values[2 * k], values[2 * k + 1]
        if not (math.isfinite(plus) and math.isfinite(minus)):
            bad.append(j)
            continue
        grad[j] = (plus - minus) / (2 * h)
    if bad:
        raise NumericalError(f"Objective is not finite around coefficient indices {bad}")
    return grad


def initial_coefficients(p: int, scale: float, seed: int) -> ZernikeCoefficients:
    """
    Seeded Gaussian starting point with zero piston. The aberration-free
    lens is a stationary point of the objective, so optimization starts
    from a small perturbation of it.
    """
    rng = np.random.default_rng(derive_seed(seed, "init"))
    beta = scale * rng.standard_normal(p)
    beta[0] = 0.0
    return ZernikeCoefficients(beta)


def _padded(beta: ZernikeCoefficients, p: int) -> np.ndarray:
    if beta.p > p:
        raise ValueError(f"Initial coefficients have {beta.p} terms, the optimizer is set up for {p}")
    out = np.zeros(p)
    out[:beta.p] = beta.beta
    return out


def _minibatch(dataset: Sequence[Stage1Sample], size: int, seed: int, iteration: int) -> List[Stage1Sample]:
    if len(dataset) <= size:
        return list(dataset)
    rng = np.random.default_rng(derive_seed(seed, "batch", iteration))
    picked = np.sort(rng.choice(len(dataset), size=size, replace=False))
    return [dataset[i] for i in picked]


def optimize_lens(dataset: Sequence[Stage1Sample], optics: OpticsConfig, hyper: Stage1Hyper,
                  extractors: Extractors = None, noise: NoiseSpec = None,
                  initial_beta: ZernikeCoefficients = None, seed: int = 0,
                  hf: PSFStack = None, task_manager: TaskManager = None,
                  ) -> Tuple[ZernikeCoefficients, OptimizationTrace]:
    """
    Gradient descent with momentum over the Zernike coefficients, piston
    excluded. Returns the best iterate and the full trace.
    """
    if not dataset:
        raise ValueError("Stage I needs a non-empty dataset")
    extractors = extractors or Extractors.proxies(hyper.heatmap_cutoff)
    noise = noise or NoiseSpec()
    if initial_beta is None:
        initial_beta = initial_coefficients(hyper.num_coefficients, hyper.init_scale_um, seed)
    trace = OptimizationTrace()
    if hyper.iterations == 0:
        return initial_beta, trace

    hf = hf if hf is not None else regularizer_psf(optics)
    targets = {id(s): reference_heatmap(s, extractors, hyper.landmark_sigma_px) for s in dataset}
    beta = _padded(initial_beta, hyper.num_coefficients)
    velocity = np.zeros_like(beta)
    free = range(1, beta.size)
    best_total, best_beta = math.inf, beta.copy()

    for t in range(hyper.iterations):
        batch = _minibatch(dataset, hyper.batch_size, seed, t)
        batch_targets = [targets[id(s)] for s in batch]
        step_noise = attr.evolve(noise, seed=derive_seed(noise.seed, "iteration", t))

        def evaluate(b):
            return evaluate_stage1(batch, ZernikeCoefficients(b), optics, extractors, hyper,
                                   step_noise, hf, batch_targets)

        if not np.all(np.isfinite(beta)):
            raise OptimizationDiverged(t, trace, "coefficients are not finite")
        terms = evaluate(beta)
        if not math.isfinite(terms.total):
            raise OptimizationDiverged(t, trace)
        trace.append(TraceRecord(t, terms.l_optics, terms.l_hmap, terms.total,
                                 tuple(float(b) for b in beta), terms.mse_mean))
        if terms.total < best_total:
            best_total, best_beta = terms.total, beta.copy()
        if t % hyper.log_every == 0 or t == hyper.iterations - 1:
            logger.info("Stage I iteration %i: total=%.6f optics=%.6f hmap=%.6f mse=%.6f",
                        t, terms.total, terms.l_optics, terms.l_hmap, terms.mse_mean)

        try:
            grad = fd_gradient(lambda b: evaluate(b).total, beta, hyper.fd_step_um,
                               indices=free, task_manager=task_manager)
        except NumericalError as e:
            raise OptimizationDiverged(t, trace, str(e)) from e
        velocity = hyper.momentum * velocity - hyper.learning_rate * grad
        beta = beta + velocity

    logger.info("Stage I finished after %i iterations, best total %.6f", len(trace), best_total)
    return ZernikeCoefficients(best_beta), trace
