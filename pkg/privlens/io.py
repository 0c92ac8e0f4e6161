"""
File formats: images (8/16-bit PNG through OpenCV), landmark sidecars,
Zernike coefficient files, PSF dumps and CSV/JSON reports. Every writer
goes through :func:`privlens.utils.atomic_write`.
"""
import csv
import io
import json
import logging
import math
import os
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import attr
import cv2
import numpy as np

from .errors import ConfigError, DatasetError, UnitsError
from .optics import PSFStack
from .utils import atomic_write
from .zernike import COEFFICIENT_UNITS, ZernikeCoefficients

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


# Images

def _to_unit_range(raw: np.ndarray) -> np.ndarray:
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float64) / 65535.0
    return np.clip(raw.astype(np.float64), 0.0, 1.0)


def read_image(path: str, channels: int = 3) -> np.ndarray:
    """Read an image as float64 ``H x W x channels`` RGB in ``[0, 1]``"""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"Unreadable image: {path}")
    image = _to_unit_range(raw)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] == 4:
        image = image[:, :, :3]
    if image.shape[2] == 3:
        image = image[:, :, ::-1]
    if image.shape[2] == channels:
        return np.ascontiguousarray(image)
    if image.shape[2] == 1:
        return np.repeat(image, channels, axis=2)
    if channels == 1:
        return image.mean(axis=2, keepdims=True)
    raise DatasetError(f"Cannot turn the {image.shape[2]}-channel image {path} into {channels} channels")


def encode_png(image: np.ndarray, bit_depth: int = 8) -> bytes:
    if bit_depth not in (8, 16):
        raise ValueError(f"PNG bit depth must be 8 or 16, got {bit_depth}")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    elif image.ndim == 3 and image.shape[2] == 3:
        image = image[:, :, ::-1]
    elif image.ndim == 3:
        raise ValueError(f"Cannot write a {image.shape[2]}-channel image as PNG")
    if bit_depth == 8:
        pixels = np.round(image * 255.0).astype(np.uint8)
    else:
        pixels = np.round(image * 65535.0).astype(np.uint16)
    ok, buffer = cv2.imencode(".png", pixels)
    if not ok:
        raise DatasetError("PNG encoding failed")
    return buffer.tobytes()


def write_image(path: str, image: np.ndarray, bit_depth: int = 8) -> str:
    return atomic_write(path, encode_png(image, bit_depth))


# Datasets

@attr.s(auto_attribs=True, frozen=True, eq=False)
class ImageRecord:
    name: str
    image: np.ndarray
    image_id: int
    landmarks: Optional[Tuple[Tuple[float, float], ...]] = None


def list_images(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise ConfigError(f"Dataset directory does not exist: {directory}")
    return sorted(name for name in os.listdir(directory)
                  if name.lower().endswith(IMAGE_EXTENSIONS) and not name.startswith("."))


def read_landmarks(path: str) -> Tuple[Tuple[float, float], ...]:
    """Read a ``{"landmarks": [[x, y], ...]}`` sidecar"""
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
        points = document["landmarks"]
        return tuple((float(x), float(y)) for x, y in points)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DatasetError(f"Invalid landmark file {path}: {e}") from None


def landmark_path(landmark_dir: str, image_name: str) -> str:
    return os.path.join(landmark_dir, os.path.splitext(image_name)[0] + ".json")


def load_dataset(directory: str, landmark_dir: str = None,
                 channels: int = 3) -> Tuple[List[ImageRecord], List[Tuple[str, Exception]]]:
    """
    Load every image of ``directory`` in name order. Unreadable items are
    skipped with a warning and returned as failures. Image ids are
    positions in the sorted listing, so they do not depend on failures.
    """
    records, failures = [], []
    for image_id, name in enumerate(list_images(directory)):
        try:
            image = read_image(os.path.join(directory, name), channels)
            landmarks = None
            if landmark_dir:
                sidecar = landmark_path(landmark_dir, name)
                if os.path.exists(sidecar):
                    landmarks = read_landmarks(sidecar)
            records.append(ImageRecord(name, image, image_id, landmarks))
        except DatasetError as e:
            logger.warning("Skipping %s: %s", name, e)
            failures.append((name, e))
    logger.info("Loaded %i images from %s (%i skipped)", len(records), directory, len(failures))
    return records, failures


# Zernike coefficients

def coefficients_to_dict(beta: ZernikeCoefficients, **extra) -> dict:
    document = {
        "p": beta.p,
        "units": beta.units,
        "coefficients": [{"j": j, "beta": float(b)} for j, b in enumerate(beta.beta, start=1)],
    }
    document.update(extra)
    return document


def coefficients_from_dict(document: dict, source: str = "<document>") -> ZernikeCoefficients:
    units = document.get("units", COEFFICIENT_UNITS)
    if units != COEFFICIENT_UNITS:
        raise UnitsError(f"{source}: coefficients are in '{units}', expected '{COEFFICIENT_UNITS}'")
    try:
        if "coefficients" in document:
            mapping = {int(item["j"]): float(item["beta"]) for item in document["coefficients"]}
            return ZernikeCoefficients.from_mapping(mapping, p=document.get("p"))
        return ZernikeCoefficients(document["beta"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{source}: invalid coefficient file: {e}") from None


def load_coefficients(path: str) -> ZernikeCoefficients:
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Coefficient file not found: {path}") from None
    except ValueError as e:
        raise ConfigError(f"Invalid JSON in coefficient file {path}: {e}") from None
    return coefficients_from_dict(document, path)


def save_coefficients(path: str, beta: ZernikeCoefficients, **extra) -> str:
    return write_json(path, coefficients_to_dict(beta, **extra))


# PSFs

def psf_raw_bytes(psf: PSFStack) -> bytes:
    """``C x K x K`` little-endian float32, C order"""
    return np.ascontiguousarray(psf.kernels, dtype="<f4").tobytes()


def psf_visualization(psf: PSFStack) -> np.ndarray:
    """Each channel scaled to its own maximum; RGB for three channels, side by side otherwise"""
    peaks = psf.kernels.max(axis=(1, 2), keepdims=True)
    scaled = np.divide(psf.kernels, peaks, out=np.zeros_like(psf.kernels), where=peaks > 0)
    if psf.channels == 3:
        return np.moveaxis(scaled, 0, -1)
    return np.concatenate(list(scaled), axis=1)


def write_psf(directory: str, stem: str, psf: PSFStack) -> List[str]:
    raw = atomic_write(os.path.join(directory, f"{stem}.f32"), psf_raw_bytes(psf))
    png = write_image(os.path.join(directory, f"{stem}.png"), psf_visualization(psf), bit_depth=8)
    return [raw, png]


# Reports

def format_value(value: Any) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return atomic_write(path, buffer.getvalue())


def json_safe(obj: Any) -> Any:
    """Replace non-finite floats by strings so the output is strict JSON"""
    if isinstance(obj, float) and not math.isfinite(obj):
        return format_value(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return json_safe(obj.item())
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def write_json(path: str, obj: Any) -> str:
    text = json.dumps(json_safe(obj), indent=2, sort_keys=True, allow_nan=False)
    return atomic_write(path, text + "\n")
