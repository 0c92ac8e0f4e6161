"""
Deterministic stand-ins for the Stage II networks.

``IdentityBundle`` and ``StyleEchoBundle`` make individual loss terms
vanish analytically; ``RandomLinearBundle`` is a seeded linear/sigmoid
model with no such shortcuts; ``RecordingBundle`` wraps any bundle and
records what the discriminator is shown.
"""
import functools
import logging
from typing import List, Tuple

import numpy as np

from .config import MOCK_BUNDLES, Stage2Options
from .errors import ConfigError
from .heatmaps import LowpassHeatmapProxy
from .sensor import as_image
from .stage2 import ModelBundle
from .utils import derive_seed

logger = logging.getLogger(__name__)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class _ProxyHeatmapMixin:
    heatmap_cutoff = 0.1

    def heatmap(self, image):
        return LowpassHeatmapProxy(self.heatmap_cutoff).extract(as_image(image))


class IdentityBundle(_ProxyHeatmapMixin, ModelBundle):
    """
    ``E`` and ``G`` pass the image through (``G(E(y), ., .) = y``), ``S`` is
    the per-channel mean, ``D`` is constant and ``Q`` flattens the pixels.
    """

    def __init__(self, discriminator_value: float = 0.5):
        self.discriminator_value = discriminator_value

    def generate(self, latent, style, heatmap):
        return as_image(latent)

    def style(self, image, domain):
        return as_image(image).mean(axis=(0, 1))

    def discriminate(self, image, domain):
        return self.discriminator_value

    def invert(self, image):
        return as_image(image)

    def features(self, image):
        return as_image(image).ravel()


class StyleEchoBundle(IdentityBundle):
    """``G`` paints the style code over every pixel, so ``S(G(., s, .)) = s``"""

    def __init__(self, shape: Tuple[int, int, int], discriminator_value: float = 0.5):
        super().__init__(discriminator_value)
        self.shape = tuple(shape)

    def generate(self, latent, style, heatmap):
        style = np.asarray(style, dtype=np.float64)
        if style.shape != (self.shape[2],):
            raise ValueError(f"Style code of shape {style.shape} cannot be painted on {self.shape}")
        return np.broadcast_to(style, self.shape).copy()


@functools.lru_cache(maxsize=16)
def _random_weights(seed: int, shape: Tuple[int, int, int], style_dim: int, latent_dim: int,
                    feature_dim: int, num_domains: int):
    pixels = int(np.prod(shape))
    rng = np.random.default_rng(derive_seed(seed, "mock", "random-linear"))
    scale = 1.0 / np.sqrt(pixels)
    weights = {
        "encoder": rng.standard_normal((latent_dim, pixels)) * scale,
        "from_latent": rng.standard_normal((pixels, latent_dim)) / np.sqrt(latent_dim),
        "from_style": rng.standard_normal((pixels, style_dim)) / np.sqrt(style_dim),
        "heatmap_gain": float(rng.standard_normal()),
        "style": rng.standard_normal((num_domains, style_dim, pixels)) * scale,
        "critic": rng.standard_normal((num_domains, pixels)) * scale,
        "critic_bias": rng.standard_normal(num_domains) * 0.1,
        "projection": rng.standard_normal((feature_dim, pixels)) * scale,
    }
    for value in weights.values():
        if isinstance(value, np.ndarray):
            value.setflags(write=False)
    return weights


class RandomLinearBundle(_ProxyHeatmapMixin, ModelBundle):
    """
    Seeded linear networks with sigmoid outputs where a range is required.
    The same ``(seed, shape, dims)`` always gives the same model.
    """

    def __init__(self, shape: Tuple[int, int, int], seed: int = 0, style_dim: int = 3, latent_dim: int = 16,
                 feature_dim: int = 32, num_domains: int = 2):
        self.shape = tuple(int(s) for s in shape)
        self.seed = seed
        self.style_dim = style_dim
        self.latent_dim = latent_dim
        self.feature_dim = feature_dim
        self.num_domains = num_domains

    @property
    def weights(self):
        return _random_weights(self.seed, self.shape, self.style_dim, self.latent_dim,
                               self.feature_dim, self.num_domains)

    def _flat(self, image) -> np.ndarray:
        image = as_image(image)
        if image.shape != self.shape:
            raise ValueError(f"Model built for images of shape {self.shape}, got {image.shape}")
        return image.ravel()

    def _domain(self, domain: int) -> int:
        if not 0 <= domain < self.num_domains:
            raise ValueError(f"Domain {domain} out of range for {self.num_domains} domains")
        return domain

    def generate(self, latent, style, heatmap):
        w = self.weights
        heatmap = np.asarray(heatmap, dtype=np.float64)
        if heatmap.shape != self.shape[:2]:
            raise ValueError(f"Heatmap of shape {heatmap.shape} does not match {self.shape[:2]}")
        z = w["from_latent"] @ np.asarray(latent, dtype=np.float64) + w["from_style"] @ np.asarray(style)
        z = z.reshape(self.shape) + w["heatmap_gain"] * heatmap[:, :, None]
        return _sigmoid(z)

    def style(self, image, domain):
        return self.weights["style"][self._domain(domain)] @ self._flat(image)

    def discriminate(self, image, domain):
        d = self._domain(domain)
        w = self.weights
        return float(_sigmoid(w["critic"][d] @ self._flat(image) + w["critic_bias"][d]))

    def invert(self, image):
        return np.tanh(self.weights["encoder"] @ self._flat(image))

    def features(self, image):
        return self.weights["projection"] @ self._flat(image)


class RecordingBundle(ModelBundle):
    """Delegates to ``inner`` and keeps a copy of every discriminator input"""

    def __init__(self, inner: ModelBundle):
        self.inner = inner
        self.discriminated: List[Tuple[np.ndarray, int]] = []

    def generate(self, latent, style, heatmap):
        return self.inner.generate(latent, style, heatmap)

    def style(self, image, domain):
        return self.inner.style(image, domain)

    def discriminate(self, image, domain):
        self.discriminated.append((np.array(image, dtype=np.float64, copy=True), domain))
        return self.inner.discriminate(image, domain)

    def invert(self, image):
        return self.inner.invert(image)

    def features(self, image):
        return self.inner.features(image)

    def heatmap(self, image):
        return self.inner.heatmap(image)

    def saw(self, image) -> bool:
        """Whether the discriminator was ever shown exactly ``image``"""
        image = np.asarray(image, dtype=np.float64)
        return any(seen.shape == image.shape and np.array_equal(seen, image) for seen, _ in self.discriminated)


def make_bundle(name: str, shape: Tuple[int, int, int], options: Stage2Options = None, seed: int = 0) -> ModelBundle:
    options = options or Stage2Options()
    if name == "identity":
        return IdentityBundle()
    if name == "style-echo":
        return StyleEchoBundle(shape)
    if name == "random":
        return RandomLinearBundle(shape, seed=derive_seed(seed, "stage2"), style_dim=options.style_dim,
                                  latent_dim=options.latent_dim, feature_dim=options.feature_dim,
                                  num_domains=options.num_domains)
    raise ConfigError(f"Unknown mock bundle '{name}', expected one of {MOCK_BUNDLES}")
