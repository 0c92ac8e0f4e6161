import csv
import functools
import json
import os

import numpy as np

from privlens.config import NoiseSpec, OpticsConfig, Stage1Hyper
from privlens.errors import DatasetError
from privlens.io import write_image
from privlens.stage1 import Stage1Sample, optimize_lens
from privlens.task_manager import TaskManager

# Scaled-down default camera: same pupil sampling pitch and the same ratio
# of aperture to sensor distance, so blur sizes in pixels match the default.
SMALL_OPTICS = dict(
    wavelengths_nm=[640.0, 550.0, 460.0],
    aperture_diameter_mm=1.25,
    object_distance_m=1.0,
    sensor_distance_m=0.03,
    pupil_resolution_px=128,
    psf_crop_px=32,
)

NO_NOISE = NoiseSpec(sigma=0.0, seed=0)


def small_optics(**changes) -> OpticsConfig:
    params = dict(SMALL_OPTICS)
    params.update(changes)
    return OpticsConfig(**params)


def face_landmarks(size: int):
    """``(x, y)`` positions of the eyes, nose and mouth of :func:`face_image`"""
    return [
        (0.36 * size, 0.40 * size),
        (0.64 * size, 0.40 * size),
        (0.50 * size, 0.55 * size),
        (0.50 * size, 0.70 * size),
    ]


def face_image(size: int = 64, seed: int = 0, channels: int = 3, texture: float = 0.12) -> np.ndarray:
    """
    Synthetic face-like scene: bright oval, dark eyes and mouth, a fine
    sinusoidal texture carrying high frequencies, and a smooth taper to
    dark borders.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / size

    def blob(cy, cx, sy, sx):
        return np.exp(-((rows - cy) ** 2 / (2 * sy ** 2) + (cols - cx) ** 2 / (2 * sx ** 2)))

    jitter = rng.uniform(-0.02, 0.02, size=4)
    face = 0.65 * blob(0.52 + jitter[0], 0.5 + jitter[1], 0.22, 0.17)
    features = (blob(0.40, 0.36, 0.03, 0.05) + blob(0.40, 0.64, 0.03, 0.05)
                + blob(0.70 + jitter[2], 0.5, 0.025, 0.09))
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(2.5, 4.0) / size
    pattern = texture * np.sin(2 * np.pi * (np.cos(angle) * cols + np.sin(angle) * rows) / period + jitter[3])
    taper = np.sin(np.pi * np.clip(rows, 0, 1)) ** 2 * np.sin(np.pi * np.clip(cols, 0, 1)) ** 2
    base = (0.15 + face - 0.35 * features + pattern * (face > 0.2)) * taper
    gains = np.linspace(1.0, 0.8, channels)
    return np.clip(base[:, :, None] * gains, 0.0, 1.0)


def face_batch(count: int, size: int = 64, channels: int = 3):
    return [face_image(size, seed=i, channels=channels) for i in range(count)]


def brute_force_convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded linear convolution, kernel center at ``K // 2``, cropped to the image"""
    height, width = image.shape
    size = kernel.shape[0]
    c = size // 2
    out = np.zeros_like(image, dtype=np.float64)
    for i in range(height):
        for j in range(width):
            total = 0.0
            for a in range(size):
                for b in range(size):
                    ii, jj = i + c - a, j + c - b
                    if 0 <= ii < height and 0 <= jj < width:
                        total += kernel[a, b] * image[ii, jj]
            out[i, j] = total
    return out


def brute_force_l1(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += abs(x - y)
    return total / a.size


def write_dataset(directory, images, names=None, landmarks=None):
    os.makedirs(directory, exist_ok=True)
    names = names or [f"face_{i:03d}.png" for i in range(len(images))]
    for name, image in zip(names, images):
        write_image(os.path.join(directory, name), image, bit_depth=16)
    if landmarks is not None:
        for name, points in zip(names, landmarks):
            path = os.path.join(directory, os.path.splitext(name)[0] + ".json")
            with open(path, "w") as f:
                json.dump({"landmarks": [list(p) for p in points]}, f)
    return [os.path.join(directory, n) for n in names]


def write_config(path, document) -> str:
    with open(path, "w") as f:
        json.dump(document, f)
    return str(path)


def small_run_document(tmp_path, **sections):
    """A configuration document for fast command-line runs"""
    document = {
        "optics": dict(SMALL_OPTICS),
        "noise": {"sigma": 0.0},
        "stage1": {"iterations": 3, "batch_size": 4, "num_coefficients": 6, "log_every": 1},
        "paths": {"output_dir": str(tmp_path / "out")},
    }
    for key, value in sections.items():
        if isinstance(value, dict):
            document.setdefault(key, {}).update(value)
        else:
            document[key] = value
    return document


def read_psf_raw(path, channels: int, size: int) -> np.ndarray:
    """Load a ``.f32`` PSF dump back as ``C x K x K`` float64"""
    data = np.fromfile(str(path), dtype="<f4")
    if data.size != channels * size * size:
        raise DatasetError(f"{path} holds {data.size} values, expected {channels}x{size}x{size}")
    return data.reshape(channels, size, size).astype(np.float64)


def read_csv(path) -> list:
    with open(str(path), newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@functools.lru_cache(maxsize=None)
def optimized_lens():
    """Default Stage I run on 16 faces at 128x128, shared by the slow tests"""
    dataset = [Stage1Sample(image, image_id=i) for i, image in enumerate(face_batch(16, size=128))]
    beta, trace = optimize_lens(dataset, small_optics(), Stage1Hyper(), noise=NoiseSpec(sigma=0.01, seed=0),
                                seed=0, task_manager=TaskManager())
    return beta, trace
