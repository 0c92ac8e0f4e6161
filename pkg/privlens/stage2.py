"""
Stage II objectives for reference-guided face generation from
privacy-preserving captures.

Notation: ``y`` is the capture, ``r`` a reference face of domain ``omega``
(or the target domain ``omega_t``), ``E`` the inversion encoder, ``G`` the
generator, ``S`` the style encoder, ``D`` the multi-task discriminator,
``Q`` the perceptual feature extractor and ``U*`` the heatmap extractor,
all provided by a :class:`ModelBundle`. Expectations are batch means.

The discriminator only ever sees references and generated images. Nothing
in this module passes the source scene to it.
"""
import abc
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np

from .config import LossWeights
from .errors import ShapeMismatchError
from .sensor import as_image

logger = logging.getLogger(__name__)

DISCRIMINATOR_EPS = 1e-7
COMPONENTS = ("adv", "sty", "ds", "cyc", "lpips", "expr")


class ModelBundle(abc.ABC):
    """The networks the Stage II losses are written against"""

    @abc.abstractmethod
    def generate(self, latent: np.ndarray, style: np.ndarray, heatmap: np.ndarray) -> np.ndarray:
        """``G(latent, style, heatmap)`` -> image"""

    @abc.abstractmethod
    def style(self, image: np.ndarray, domain: int) -> np.ndarray:
        """``S_omega(image)`` -> style code"""

    @abc.abstractmethod
    def discriminate(self, image: np.ndarray, domain: int) -> float:
        """``D_omega(image)`` -> probability of being real, in ``(0, 1)``"""

    @abc.abstractmethod
    def invert(self, image: np.ndarray) -> np.ndarray:
        """``E(image)`` -> latent"""

    @abc.abstractmethod
    def features(self, image: np.ndarray) -> np.ndarray:
        """``Q(image)`` -> perceptual feature vector"""

    @abc.abstractmethod
    def heatmap(self, image: np.ndarray) -> np.ndarray:
        """``U*(image)`` -> ``H x W`` heatmap in ``[0, 1]``"""


def _heatmap(bundle: ModelBundle, image: np.ndarray, use_heatmap: bool) -> np.ndarray:
    if use_heatmap:
        return bundle.heatmap(image)
    return np.zeros(np.shape(image)[:2])


def translate(bundle: ModelBundle, y, style: np.ndarray, use_heatmap: bool = True) -> np.ndarray:
    """``G(E(y), U*(y), style)``"""
    return bundle.generate(bundle.invert(y), style, _heatmap(bundle, y, use_heatmap))


def clamp_probability(value: float, what: str = "discriminator") -> float:
    """Clamp to ``[eps, 1 - eps]`` with a warning when the value was saturated"""
    clamped = min(max(float(value), DISCRIMINATOR_EPS), 1.0 - DISCRIMINATOR_EPS)
    if clamped != value:
        logger.warning("%s output %r clamped to %r", what, value, clamped)
    return clamped


def l1_mean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError("L1 operands", a.shape, b.shape)
    return float(np.mean(np.abs(a - b)))


def adv_loss(bundle: ModelBundle, y, r, omega: int, omega_tilde: int, use_heatmap: bool = True) -> float:
    """
    ``log D_omega(r) + log(1 - D_omega_t(G(E(y), m, S_omega_t(r))))``.
    The reference is scored under its own domain ``omega``.
    """
    real = clamp_probability(bundle.discriminate(r, omega))
    fake_image = translate(bundle, y, bundle.style(r, omega_tilde), use_heatmap)
    fake = clamp_probability(bundle.discriminate(fake_image, omega_tilde))
    return math.log(real) + math.log(1.0 - fake)


def sty_loss(bundle: ModelBundle, y, r, omega_tilde: int, use_heatmap: bool = True) -> float:
    """Mean L1 between the reference style and the style re-encoded from the generated image"""
    style = bundle.style(r, omega_tilde)
    fake = translate(bundle, y, style, use_heatmap)
    return l1_mean(style, bundle.style(fake, omega_tilde))


def ds_loss(bundle: ModelBundle, y, r1, r2, omega_tilde: int, use_heatmap: bool = True) -> float:
    """Mean L1 between two generations that differ only in the reference"""
    latent = bundle.invert(y)
    heatmap = _heatmap(bundle, y, use_heatmap)
    first = bundle.generate(latent, bundle.style(r1, omega_tilde), heatmap)
    second = bundle.generate(latent, bundle.style(r2, omega_tilde), heatmap)
    return l1_mean(first, second)


def cyc_loss(bundle: ModelBundle, y, omega: int, omega_tilde: int, r, use_heatmap: bool = True) -> float:
    """
    Round trip ``|y - G(E(f), U*(f), S_omega(y))|`` with
    ``f = G(E(y), U*(y), S_omega_t(r))``.
    """
    fake = translate(bundle, y, bundle.style(r, omega_tilde), use_heatmap)
    back = translate(bundle, fake, bundle.style(y, omega), use_heatmap)
    return l1_mean(y, back)


def lpips_loss(bundle: ModelBundle, y, r, omega_tilde: int, use_heatmap: bool = True) -> float:
    """Unsquared Euclidean distance between ``Q(r)`` and ``Q`` of the generated image"""
    fake = translate(bundle, y, bundle.style(r, omega_tilde), use_heatmap)
    a = np.asarray(bundle.features(r), dtype=np.float64)
    b = np.asarray(bundle.features(fake), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError("perceptual features", a.shape, b.shape)
    return float(np.linalg.norm(a - b))


def expr_loss(x, y, m_star, m) -> float:
    """Mean L1 of ``m* . x - m . y``; heatmaps are broadcast over channels"""
    x, y = as_image(x), as_image(y)
    m_star = np.asarray(m_star, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError("expression images", x.shape, y.shape)
    for heatmap in (m_star, m):
        if heatmap.shape != x.shape[:2]:
            raise ShapeMismatchError("expression heatmap", heatmap.shape, x.shape[:2])
    return float(np.mean(np.abs(m_star[:, :, None] * x - m[:, :, None] * y)))


@attr.s(auto_attribs=True, frozen=True, eq=False)
class Stage2Sample:
    """
    One source scene ``x``, its capture ``y``, the references ``r`` of
    domain ``target_domain`` and the source heatmap ``m*`` (landmark
    oracle or ``U*(x)``).
    """
    source: np.ndarray = attr.ib(converter=as_image)
    capture: np.ndarray = attr.ib(converter=as_image)
    references: Tuple[np.ndarray, ...] = attr.ib(converter=lambda refs: tuple(as_image(r) for r in refs))
    m_star: Optional[np.ndarray] = None
    source_domain: int = 0
    target_domain: int = 1

    def __attrs_post_init__(self):
        if not self.references:
            raise ValueError("A Stage II sample needs at least one reference")


@attr.s(auto_attribs=True, frozen=True)
class LossBreakdown:
    adv: float
    sty: float
    ds: float
    cyc: float
    lpips: float
    expr: float
    total: float
    pairs: int = 0

    @property
    def components(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in COMPONENTS}

    def to_dict(self) -> Dict[str, float]:
        return dict(self.components, total=self.total, pairs=self.pairs)


def combine(components: Dict[str, float], weights: LossWeights) -> float:
    """``adv + l_sty sty - l_ds ds + l_cyc cyc + l_lpips lpips + l_expr expr``"""
    return (components["adv"]
            + weights.lambda_sty * components["sty"]
            - weights.lambda_ds * components["ds"]
            + weights.lambda_cyc * components["cyc"]
            + weights.lambda_lpips * components["lpips"]
            + weights.lambda_expr * components["expr"])


def _pairs(samples: Sequence[Stage2Sample]) -> List[Tuple[Stage2Sample, np.ndarray, np.ndarray]]:
    """
    Every ``(sample, r1, r2)`` with ``r1`` one of the sample's references
    and ``r2`` the next reference in batch order, wrapping around.
    """
    flat = [r for s in samples for r in s.references]
    out = []
    k = 0
    for sample in samples:
        for r1 in sample.references:
            out.append((sample, r1, flat[(k + 1) % len(flat)]))
            k += 1
    return out


def full_stage2_objective(bundle: ModelBundle, samples: Sequence[Stage2Sample], weights: LossWeights,
                          use_heatmap: bool = True) -> LossBreakdown:
    """
    Evaluate every component over all ``(source, reference)`` pairs and
    combine them. The expression term compares the source masked by ``m*``
    with the generated face masked by its own heatmap.
    """
    if not samples:
        raise ValueError("Stage II needs a non-empty batch")
    sums = dict.fromkeys(COMPONENTS, 0.0)
    pairs = _pairs(samples)
    for sample, r1, r2 in pairs:
        y, omega, omega_t = sample.capture, sample.source_domain, sample.target_domain
        sums["adv"] += adv_loss(bundle, y, r1, omega, omega_t, use_heatmap)
        sums["sty"] += sty_loss(bundle, y, r1, omega_t, use_heatmap)
        sums["ds"] += ds_loss(bundle, y, r1, r2, omega_t, use_heatmap)
        sums["cyc"] += cyc_loss(bundle, y, omega, omega_t, r1, use_heatmap)
        sums["lpips"] += lpips_loss(bundle, y, r1, omega_t, use_heatmap)
        fake = translate(bundle, y, bundle.style(r1, omega_t), use_heatmap)
        m_star = sample.m_star if sample.m_star is not None else bundle.heatmap(sample.source)
        sums["expr"] += expr_loss(sample.source, fake, m_star, bundle.heatmap(fake))
    components = {name: value / len(pairs) for name, value in sums.items()}
    total = combine(components, weights)
    logger.debug("Stage II breakdown over %i pairs: %s total=%.6f", len(pairs), components, total)
    return LossBreakdown(total=total, pairs=len(pairs), **components)
