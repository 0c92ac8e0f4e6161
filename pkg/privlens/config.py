"""
Run configuration.

Configuration documents are JSON with unit suffixes in the key names
(``aperture_diameter_mm``, ``wavelengths_nm``, ...). A bundled default
document is merged with the user file and with ``section.key=value``
overrides; unknown keys are rejected with the dotted path of the offender.
"""
import copy
import json
import logging
import math
import os
from typing import Any, Dict, Optional, Sequence, Tuple

import attr

from .errors import ConfigError
from .utils import canonical_json, derive_seed, sha256_hex

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(__file__), "data", "default_config.json")
PAPER_HW_COEFFICIENTS_PATH = os.path.join(os.path.dirname(__file__), "data", "paper_hw_coefficients.json")

LENS_KINDS = ("zernike", "paper-hw", "zero", "delta", "defocus", "lowres")
ATTACK_PARAMETERS = {
    "wiener": ("nsr",),
    "regularized_inverse": ("epsilon",),
    "unsharp_blind": ("radius", "amount"),
}
MOCK_BUNDLES = ("identity", "style-echo", "random")


def _float_tuple(values) -> Tuple[float, ...]:
    if isinstance(values, (int, float)):
        values = [values]
    return tuple(float(v) for v in values)


def _positive(instance, attribute, value):
    if value is None:
        return
    values = value if isinstance(value, tuple) else (value,)
    for v in values:
        if not (v > 0):
            raise ConfigError(f"'{attribute.name}' must be strictly positive, got {value!r}")


def _non_negative(instance, attribute, value):
    if not (value >= 0) or math.isnan(value):
        raise ConfigError(f"'{attribute.name}' must be >= 0, got {value!r}")


def _integer(instance, attribute, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{attribute.name}' must be an integer, got {value!r}")


@attr.s(auto_attribs=True, frozen=True)
class OpticsConfig:
    wavelengths_nm: Tuple[float, ...] = attr.ib(default=(640.0, 550.0, 460.0),
                                                converter=_float_tuple, validator=_positive)
    aperture_diameter_mm: float = attr.ib(default=5.0, converter=float, validator=_positive)
    object_distance_m: float = attr.ib(default=1.0, converter=float, validator=_positive)
    focus_distance_m: Optional[float] = attr.ib(default=None, converter=attr.converters.optional(float),
                                                validator=_positive)
    sensor_distance_m: float = attr.ib(default=0.12, converter=float, validator=_positive)
    pupil_resolution_px: int = attr.ib(default=512, validator=[_integer, _positive])
    psf_crop_px: int = attr.ib(default=64, validator=[_integer, _positive])
    pixel_pitch_um: Optional[float] = attr.ib(default=None, converter=attr.converters.optional(float),
                                              validator=_positive)
    defocus_beta4_um: Optional[float] = attr.ib(default=None, converter=attr.converters.optional(float))
    defocus_target_fraction: float = attr.ib(default=0.015, converter=float)

    def __attrs_post_init__(self):
        if not self.wavelengths_nm:
            raise ConfigError("'wavelengths_nm' needs at least one channel")
        if self.pupil_resolution_px % 2:
            raise ConfigError(f"'pupil_resolution_px' must be even, got {self.pupil_resolution_px}")
        if self.psf_crop_px > self.pupil_resolution_px:
            raise ConfigError(f"'psf_crop_px' ({self.psf_crop_px}) must not exceed "
                              f"'pupil_resolution_px' ({self.pupil_resolution_px})")
        if self.defocus_beta4_um is not None and not math.isfinite(self.defocus_beta4_um):
            raise ConfigError(f"'defocus_beta4_um' must be finite, got {self.defocus_beta4_um}")
        if not 0 < self.defocus_target_fraction < 1:
            raise ConfigError(f"'defocus_target_fraction' must be in (0, 1), got {self.defocus_target_fraction}")

    @property
    def channels(self) -> int:
        return len(self.wavelengths_nm)

    @property
    def pupil_pitch_um(self) -> float:
        return self.aperture_diameter_mm * 1000.0 / self.pupil_resolution_px

    @property
    def sensor_pitch_um(self) -> float:
        return self.pixel_pitch_um if self.pixel_pitch_um is not None else self.pupil_pitch_um

    @property
    def focus_distance(self) -> float:
        return self.focus_distance_m if self.focus_distance_m is not None else self.object_distance_m


@attr.s(auto_attribs=True, frozen=True)
class NoiseSpec:
    sigma: float = attr.ib(default=0.01, converter=float, validator=_non_negative)
    seed: int = attr.ib(default=0, validator=_integer)

    def __attrs_post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"'seed' must be an unsigned 64-bit integer, got {self.seed}")


@attr.s(auto_attribs=True, frozen=True)
class Stage1Hyper:
    alpha1: float = attr.ib(default=0.5, converter=float, validator=_non_negative)
    alpha2: float = attr.ib(default=1.0, converter=float, validator=_non_negative)
    learning_rate: float = attr.ib(default=0.05, converter=float, validator=_positive)
    momentum: float = attr.ib(default=0.9, converter=float, validator=_non_negative)
    iterations: int = attr.ib(default=200, validator=_integer)
    fd_step_um: float = attr.ib(default=1e-3, converter=float, validator=_positive)
    batch_size: int = attr.ib(default=16, validator=[_integer, _positive])
    num_coefficients: int = attr.ib(default=15, validator=[_integer, _positive])
    init_scale_um: float = attr.ib(default=0.005, converter=float, validator=_non_negative)
    heatmap_cutoff: float = attr.ib(default=0.1, converter=float)
    landmark_sigma_px: float = attr.ib(default=4.0, converter=float, validator=_positive)
    log_every: int = attr.ib(default=10, validator=[_integer, _positive])

    def __attrs_post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"'iterations' must be >= 0, got {self.iterations}")
        if self.momentum >= 1:
            raise ConfigError(f"'momentum' must be < 1, got {self.momentum}")
        if not 0 < self.heatmap_cutoff < 1:
            raise ConfigError(f"'heatmap_cutoff' must be in (0, 1), got {self.heatmap_cutoff}")


@attr.s(auto_attribs=True, frozen=True)
class LossWeights:
    lambda_sty: float = attr.ib(default=1.0, converter=float, validator=_non_negative)
    lambda_ds: float = attr.ib(default=1.0, converter=float, validator=_non_negative)
    lambda_cyc: float = attr.ib(default=1.0, converter=float, validator=_non_negative)
    lambda_lpips: float = attr.ib(default=1.0, converter=float, validator=_non_negative)
    lambda_expr: float = attr.ib(default=1.0, converter=float, validator=_non_negative)


@attr.s(auto_attribs=True, frozen=True)
class Stage2Options:
    weights: LossWeights = attr.ib(factory=LossWeights)
    mock: str = attr.ib(default="random")
    style_dim: int = attr.ib(default=3, validator=[_integer, _positive])
    latent_dim: int = attr.ib(default=16, validator=[_integer, _positive])
    feature_dim: int = attr.ib(default=32, validator=[_integer, _positive])
    num_domains: int = attr.ib(default=2, validator=[_integer, _positive])
    source_domain: int = attr.ib(default=0, validator=_integer)
    target_domain: int = attr.ib(default=1, validator=_integer)
    use_heatmap: bool = attr.ib(default=True)
    references_per_source: int = attr.ib(default=1, validator=[_integer, _positive])

    def __attrs_post_init__(self):
        if self.mock not in MOCK_BUNDLES:
            raise ConfigError(f"Unknown mock bundle '{self.mock}', expected one of {MOCK_BUNDLES}")
        for name in ("source_domain", "target_domain"):
            value = getattr(self, name)
            if not 0 <= value < self.num_domains:
                raise ConfigError(f"'{name}' must be in [0, {self.num_domains}), got {value}")


@attr.s(auto_attribs=True, frozen=True)
class LensSpec:
    name: str = attr.ib(default="paper-hw")
    kind: str = attr.ib(default="paper-hw")
    coefficients_file: Optional[str] = attr.ib(default=None)
    defocus_beta4_um: Optional[float] = attr.ib(default=None, converter=attr.converters.optional(float))
    size_px: int = attr.ib(default=16, validator=[_integer, _positive])

    def __attrs_post_init__(self):
        if self.kind not in LENS_KINDS:
            raise ConfigError(f"Unknown lens kind '{self.kind}', expected one of {LENS_KINDS}")
        if self.kind == "zernike" and not self.coefficients_file:
            raise ConfigError(f"Lens '{self.name}' of kind 'zernike' needs 'coefficients_file'")


@attr.s(auto_attribs=True, frozen=True)
class AttackMethod:
    name: str
    nsr: float = attr.ib(default=1e-3, converter=float, validator=_non_negative)
    epsilon: float = attr.ib(default=1e-2, converter=float, validator=_positive)
    radius: float = attr.ib(default=2.0, converter=float, validator=_positive)
    amount: float = attr.ib(default=1.5, converter=float, validator=_positive)

    def __attrs_post_init__(self):
        if self.name not in ATTACK_PARAMETERS:
            raise ConfigError(f"Unknown attack method '{self.name}', expected one of "
                              f"{tuple(ATTACK_PARAMETERS)}")

    @property
    def label(self) -> str:
        params = ",".join(f"{p}={getattr(self, p):g}" for p in ATTACK_PARAMETERS[self.name])
        return f"{self.name}({params})"


@attr.s(auto_attribs=True, frozen=True)
class AttackOptions:
    lenses: Tuple[LensSpec, ...] = attr.ib(factory=tuple, converter=tuple)
    methods: Tuple[AttackMethod, ...] = attr.ib(factory=tuple, converter=tuple)
    nsr_sweep: Tuple[float, ...] = attr.ib(factory=tuple, converter=_float_tuple)
    dump_images: bool = attr.ib(default=False)


@attr.s(auto_attribs=True, frozen=True)
class PathsConfig:
    dataset_dir: Optional[str] = None
    landmark_dir: Optional[str] = None
    triples_dir: Optional[str] = None
    output_dir: str = "privlens-out"
    cache_file: Optional[str] = None


@attr.s(auto_attribs=True, frozen=True)
class RunConfig:
    seed: int = attr.ib(default=0, validator=_integer)
    optics: OpticsConfig = attr.ib(factory=OpticsConfig)
    noise: NoiseSpec = attr.ib(factory=NoiseSpec)
    stage1: Stage1Hyper = attr.ib(factory=Stage1Hyper)
    stage2: Stage2Options = attr.ib(factory=Stage2Options)
    lens: LensSpec = attr.ib(factory=LensSpec)
    attack: AttackOptions = attr.ib(factory=AttackOptions)
    paths: PathsConfig = attr.ib(factory=PathsConfig)

    def to_dict(self) -> Dict[str, Any]:
        return attr.asdict(self)

    @property
    def config_hash(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


def _check_keys(cls, data: Dict[str, Any], where: str, allowed: Sequence[str] = None):
    if not isinstance(data, dict):
        raise ConfigError(f"'{where}' must be a JSON object, got {type(data).__name__}")
    allowed = set(allowed if allowed is not None else (a.name for a in attr.fields(cls)))
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(f'{where}.{k}' for k in unknown)}")


def _build(cls, data: Dict[str, Any], where: str, **extra):
    _check_keys(cls, data, where)
    try:
        return cls(**data, **extra)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _build_attack_method(data: Dict[str, Any], where: str) -> AttackMethod:
    if not isinstance(data, dict) or "name" not in data:
        raise ConfigError(f"'{where}' must be an object with a 'name'")
    name = data["name"]
    if name not in ATTACK_PARAMETERS:
        raise ConfigError(f"Unknown attack method '{name}', expected one of {tuple(ATTACK_PARAMETERS)}")
    _check_keys(AttackMethod, data, where, allowed=("name",) + ATTACK_PARAMETERS[name])
    return _build(AttackMethod, data, where)


def build_config(document: Dict[str, Any]) -> RunConfig:
    """Turn a merged configuration document into a validated :class:`RunConfig`"""
    _check_keys(RunConfig, document, "config")
    doc = copy.deepcopy(document)
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError(f"'seed' must be an unsigned 64-bit integer, got {seed!r}")

    stage2 = dict(doc.get("stage2", {}))
    _check_keys(Stage2Options, stage2, "stage2")
    weights = _build(LossWeights, stage2.pop("weights", {}), "stage2.weights")

    attack = dict(doc.get("attack", {}))
    _check_keys(AttackOptions, attack, "attack")
    lenses = [_build(LensSpec, spec, f"attack.lenses[{i}]") for i, spec in enumerate(attack.pop("lenses", []))]
    methods = [_build_attack_method(m, f"attack.methods[{i}]") for i, m in enumerate(attack.pop("methods", []))]
    names = [lens.name for lens in lenses]
    if len(set(names)) != len(names):
        raise ConfigError(f"Duplicate lens names in attack.lenses: {names}")

    noise = dict(doc.get("noise", {}))
    noise.setdefault("seed", derive_seed(seed, "noise"))

    config = RunConfig(
        seed=seed,
        optics=_build(OpticsConfig, doc.get("optics", {}), "optics"),
        noise=_build(NoiseSpec, noise, "noise"),
        stage1=_build(Stage1Hyper, doc.get("stage1", {}), "stage1"),
        stage2=_build(Stage2Options, stage2, "stage2", weights=weights),
        lens=_build(LensSpec, doc.get("lens", {}), "lens"),
        attack=_build(AttackOptions, attack, "attack", lenses=lenses, methods=methods),
        paths=_build(PathsConfig, doc.get("paths", {}), "paths"),
    )
    _check_paths(config)
    return config


def _check_paths(config: RunConfig):
    paths = config.paths
    for name in ("dataset_dir", "landmark_dir", "triples_dir"):
        value = getattr(paths, name)
        if value is not None and not os.path.isdir(value):
            raise ConfigError(f"'paths.{name}' does not exist: {value}")
    for where, lens in [("lens", config.lens)] + [
            (f"attack.lenses[{i}]", spec) for i, spec in enumerate(config.attack.lenses)]:
        if lens.coefficients_file and not os.path.isfile(lens.coefficients_file):
            raise ConfigError(f"'{where}.coefficients_file' does not exist: {lens.coefficients_file}")


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base``; lists are replaced"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> Dict[str, Any]:
    """
    Parse a ``section.key=value`` override into a nested document. The
    value is read as JSON and falls back to a plain string.

    >>> parse_override("stage1.iterations=10")
    {'stage1': {'iterations': 10}}
    >>> parse_override("paths.output_dir=out")
    {'paths': {'output_dir': 'out'}}
    """
    if "=" not in text:
        raise ConfigError(f"Invalid override '{text}', expected section.key=value")
    dotted, raw = text.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"Invalid override '{text}', empty key")
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    doc: Dict[str, Any] = value
    for key in reversed(keys):
        doc = {key: doc}
    return doc


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {path}") from None
    except ValueError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from None


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    document = read_json(DEFAULT_CONFIG_PATH)
    if path:
        document = deep_merge(document, read_json(path))
    for text in overrides:
        document = deep_merge(document, parse_override(text))
    if seed is not None:
        document["seed"] = seed
    config = build_config(document)
    logger.debug("Loaded configuration %s (hash %s)", path or "<defaults>", config.config_hash[:12])
    return config
