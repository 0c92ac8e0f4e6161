"""
Deconvolution attacks on simulated captures and the robustness report
that compares lens designs.

Non-blind attacks (Wiener, truncated inverse) know the PSF and invert the
same zero-padded linear geometry as :func:`privlens.sensor.convolve`: the
capture is placed at offset ``(K//2, K//2)`` inside an
``(H+K-1) x (W+K-1)`` canvas, filtered with the kernel spectrum taken at
the canvas size, and the top-left ``H x W`` block is the estimate.
"""
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy import fft
from scipy.ndimage import gaussian_filter

from .config import AttackMethod, NoiseSpec
from .errors import AttackError, ShapeMismatchError, summarize_exception
from .lenses import Lens
from .metrics import psnr, ssim
from .optics import PSFStack
from .sensor import as_image, camera_response, mse
from .task_manager import TaskManager

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-12
BLIND_METHODS = ("unsharp_blind",)


def _check_channels(y: np.ndarray, psf: PSFStack):
    if y.shape[2] != psf.channels:
        raise ShapeMismatchError("capture channels vs PSF channels", (y.shape[2],), (psf.channels,))


def _is_centered_delta(kernel: np.ndarray) -> bool:
    c = kernel.shape[0] // 2
    return kernel[c, c] == 1.0 and np.count_nonzero(kernel) == 1


def _inverse_filter(y: np.ndarray, psf: PSFStack, make_filter: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    y = as_image(y)
    _check_channels(y, psf)
    height, width = y.shape[:2]
    out = np.empty_like(y)
    for channel, kernel in enumerate(psf.kernels):
        if _is_centered_delta(kernel):
            out[:, :, channel] = y[:, :, channel]
            continue
        ky, kx = kernel.shape
        cy, cx = ky // 2, kx // 2
        shape = (height + ky - 1, width + kx - 1)
        canvas = np.zeros(shape)
        canvas[cy:cy + height, cx:cx + width] = y[:, :, channel]
        kernel_hat = fft.rfft2(kernel, s=shape)
        estimate = fft.irfft2(make_filter(kernel_hat) * fft.rfft2(canvas), s=shape)
        out[:, :, channel] = estimate[:height, :width]
    return camera_response(out)


def wiener_deconvolve(y, psf: PSFStack, nsr: float) -> np.ndarray:
    """
    ``x = F^-1{ conj(H) Y / (|H|^2 + nsr) }`` per channel, clamped to
    ``[0, 1]``. Denominators below 1e-12 are floored with a warning.
    """
    if nsr < 0 or not math.isfinite(nsr):
        raise ValueError(f"nsr must be a finite value >= 0, got {nsr}")

    def make_filter(kernel_hat):
        denominator = np.abs(kernel_hat) ** 2 + nsr
        floored = denominator < DENOMINATOR_FLOOR
        if floored.any():
            logger.warning("Ill-conditioned Wiener filter: %i frequencies floored at %g (nsr=%g)",
                           int(floored.sum()), DENOMINATOR_FLOOR, nsr)
        return np.conj(kernel_hat) / np.maximum(denominator, DENOMINATOR_FLOOR)

    return _inverse_filter(y, psf, make_filter)


def regularized_inverse(y, psf: PSFStack, epsilon: float) -> np.ndarray:
    """Truncated inverse filter: ``1/H`` where ``|H| >= epsilon``, zero elsewhere"""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")

    def make_filter(kernel_hat):
        magnitude = np.abs(kernel_hat)
        keep = magnitude >= epsilon
        safe = np.where(keep, kernel_hat, 1.0)
        return np.where(keep, 1.0 / safe, 0.0)

    return _inverse_filter(y, psf, make_filter)


def unsharp_blind(y, radius: float, amount: float) -> np.ndarray:
    """PSF-agnostic sharpening ``y + amount * (y - G_radius * y)``"""
    y = as_image(y)
    blurred = gaussian_filter(y, sigma=(radius, radius, 0), mode="reflect")
    return camera_response(y + amount * (y - blurred))


def run_attack(method: AttackMethod, y, psf: Optional[PSFStack]) -> np.ndarray:
    if method.name in BLIND_METHODS:
        return unsharp_blind(y, method.radius, method.amount)
    if psf is None:
        raise AttackError(method.name, "the lens has no PSF for a non-blind attack")
    if method.name == "wiener":
        return wiener_deconvolve(y, psf, method.nsr)
    if method.name == "regularized_inverse":
        return regularized_inverse(y, psf, method.epsilon)
    raise AttackError(method.name, "unknown attack method")


def expand_nsr_sweep(methods: Sequence[AttackMethod], sweep: Sequence[float]) -> List[AttackMethod]:
    """Add one Wiener entry per swept nsr that is not configured already"""
    methods = list(methods)
    present = {m.nsr for m in methods if m.name == "wiener"}
    for nsr in sweep:
        if nsr not in present:
            methods.append(AttackMethod("wiener", nsr=nsr))
            present.add(nsr)
    return methods


@attr.s(auto_attribs=True, frozen=True)
class AttackRow:
    lens: str
    method: str
    image: str
    psnr: float
    mse: float
    ssim: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@attr.s(auto_attribs=True, frozen=True)
class AttackAggregate:
    lens: str
    method: str
    images: int
    failures: int
    psnr_mean: float
    mse_mean: float
    ssim_mean: float


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else math.nan


@attr.s(auto_attribs=True)
class AttackReport:
    rows: List[AttackRow] = attr.ib(factory=list)
    recovered: Dict[Tuple[str, str, str], np.ndarray] = attr.ib(factory=dict, repr=False)

    def sort(self):
        self.rows.sort(key=lambda r: (r.lens, r.method, r.image))

    @property
    def successes(self) -> int:
        return sum(row.ok for row in self.rows)

    @property
    def failures(self) -> int:
        return len(self.rows) - self.successes

    def aggregates(self) -> List[AttackAggregate]:
        """Arithmetic means over successful rows, per ``(lens, method)``"""
        groups: Dict[Tuple[str, str], List[AttackRow]] = {}
        for row in self.rows:
            groups.setdefault((row.lens, row.method), []).append(row)
        out = []
        for (lens, method), rows in sorted(groups.items()):
            good = [r for r in rows if r.ok]
            out.append(AttackAggregate(
                lens=lens, method=method, images=len(rows), failures=len(rows) - len(good),
                psnr_mean=_mean([r.psnr for r in good]),
                mse_mean=_mean([r.mse for r in good]),
                ssim_mean=_mean([r.ssim for r in good]),
            ))
        return out

    def aggregate(self, lens: str, method: str) -> AttackAggregate:
        for agg in self.aggregates():
            if agg.lens == lens and agg.method == method:
                return agg
        raise KeyError((lens, method))


def _failed_row(lens: Lens, method: AttackMethod, name: str, exc: Exception) -> AttackRow:
    status = summarize_exception(exc)
    logger.warning("Attack %s on lens '%s', image '%s' failed: %s", method.label, lens.name, name, exc)
    return AttackRow(lens.name, method.label, name, math.nan, math.nan, math.nan, status)


def attack_suite(dataset: Sequence[Tuple[str, np.ndarray]], lenses: Sequence[Lens],
                 methods: Sequence[AttackMethod], noise: NoiseSpec,
                 task_manager: TaskManager = None, keep_images: bool = False) -> AttackReport:
    """
    Capture every ``(name, image)`` of ``dataset`` through every lens, run
    every attack on the capture and score the recovery against the scene.
    Item failures become rows with a non-``ok`` status; the suite goes on.
    The noise stream of an image depends only on its position in
    ``dataset``, so rows do not depend on scheduling.
    """
    if not dataset:
        raise ValueError("The attack suite needs a non-empty dataset")
    if not lenses:
        raise ValueError("The attack suite needs at least one lens")
    if not methods:
        raise ValueError("The attack suite needs at least one method")

    work = [(lens, image_id, name, image)
            for lens in lenses for image_id, (name, image) in enumerate(dataset)]

    def attack_item(item):
        lens, image_id, name, image = item
        rows, recovered = [], {}
        try:
            y = lens.capture(image, noise, image_id)
        except Exception as e:
            return [_failed_row(lens, m, name, e) for m in methods], recovered
        for method in methods:
            try:
                x_hat = run_attack(method, y, lens.psf)
                error = mse(image, x_hat)
                rows.append(AttackRow(lens.name, method.label, name,
                                      psnr(image, x_hat), error, ssim(image, x_hat)))
                if keep_images:
                    recovered[(lens.name, method.label, name)] = x_hat
            except Exception as e:
                rows.append(_failed_row(lens, method, name, e))
        return rows, recovered

    manager = task_manager or TaskManager(max_workers=1)
    report = AttackReport()
    for rows, recovered in manager.map(attack_item, work):
        report.rows.extend(rows)
        report.recovered.update(recovered)
    report.sort()
    logger.info("Attack suite finished: %i rows, %i failures", len(report.rows), report.failures)
    return report
