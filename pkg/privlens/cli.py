"""
Command line front end::

    privlens <psf|capture|optimize|attack|losses> [--config FILE] [--out DIR]
             [--seed U64] [section.key=value ...]

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 numerical failure.
"""
import argparse
import json
import logging
import os
import re
import signal
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import attr

from .__version__ import __version__
from .attacks import attack_suite, expand_nsr_sweep
from .cache import DummyCache, PSFCache, _Cache
from .config import ATTACK_PARAMETERS, MOCK_BUNDLES, AttackMethod, RunConfig, load_config
from .errors import ConfigError, DatasetError, OptimizationDiverged, PrivLensError
from .heatmaps import landmark_heatmap_oracle
from .io import (ImageRecord, landmark_path, load_coefficients, load_dataset, read_landmarks,
                 save_coefficients, write_csv, write_image, write_json, write_psf)
from .lenses import Lens, build_lens, render_psf
from .manifest import Manifest
from .metrics import psnr
from .mocks import make_bundle
from .optics import central_energy_fraction, mtf_highfreq_ratio
from .sensor import mse
from .stage1 import Extractors, OptimizationTrace, Stage1Sample, initial_coefficients, optimize_lens
from .stage2 import Stage2Sample, full_stage2_objective
from .task_manager import TaskManager
from .utils import get_data_path, get_thread_limit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

TRACE_HEADER = ("iter", "L_optics", "L_hmap", "total", "mse_mean")
ATTACK_HEADER = ("lens", "method", "image", "psnr", "mse", "ssim", "status")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed: {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer: {text}")
    return value


def _methods(text: str) -> List[str]:
    names = [name.strip() for name in text.split(",") if name.strip()]
    unknown = [name for name in names if name not in ATTACK_PARAMETERS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(
            f"unknown attack method(s) {unknown or text!r}; choose from {', '.join(ATTACK_PARAMETERS)}")
    return names


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file merged over the bundled defaults")
    common.add_argument("--out", help="output directory (paths.output_dir)")
    common.add_argument("--seed", type=_u64, help="master seed")
    common.add_argument("--set", dest="settings", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="configuration override, value parsed as JSON")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("overrides", nargs="*", metavar="SECTION.KEY=VALUE",
                        help="configuration overrides, same as --set")

    parser = argparse.ArgumentParser(prog="privlens", description="Privacy-preserving camera lens toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("psf", parents=[common], help="render the PSF of the configured lens")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--coefficients", help="Zernike coefficient JSON file")
    source.add_argument("--preset", choices=["paper-hw", "zero", "defocus"], help="built-in lens")
    p.add_argument("--mtf-cutoff", type=float, default=0.5, help="fraction of Nyquist for the MTF ratio")

    p = sub.add_parser("capture", parents=[common], help="simulate captures of a dataset")
    p.add_argument("--dataset", help="image directory (paths.dataset_dir)")
    p.add_argument("--coefficients", help="Zernike coefficient JSON file for the lens")

    p = sub.add_parser("optimize", parents=[common], help="Stage I lens optimization")
    p.add_argument("--dataset", help="image directory (paths.dataset_dir)")
    p.add_argument("--landmarks", help="landmark sidecar directory (paths.landmark_dir)")
    p.add_argument("--init", help="initial Zernike coefficient JSON file")

    p = sub.add_parser("attack", parents=[common], help="deconvolution attacks on captures")
    p.add_argument("--dataset", help="image directory (paths.dataset_dir)")
    p.add_argument("--methods", type=_methods,
                   help=f"comma separated subset of: {', '.join(ATTACK_PARAMETERS)}")
    p.add_argument("--nsr-sweep", type=_floats, help="extra Wiener nsr values, comma separated")
    p.add_argument("--dump-images", action="store_true", help="write recovered images")

    p = sub.add_parser("losses", parents=[common], help="evaluate the Stage II objective")
    p.add_argument("--triples", help="directory with source/, reference/ and optional landmarks/")
    p.add_argument("--mock", choices=MOCK_BUNDLES, help="model bundle (stage2.mock)")
    return parser


def _path_override(key: str, value: Optional[str]) -> List[str]:
    return [f"{key}={json.dumps(value)}"] if value else []


def load_run_config(args) -> RunConfig:
    overrides = list(args.settings) + list(args.overrides)
    overrides += _path_override("paths.output_dir", args.out)
    for name, key in (("dataset", "paths.dataset_dir"), ("landmarks", "paths.landmark_dir"),
                      ("triples", "paths.triples_dir")):
        overrides += _path_override(key, getattr(args, name, None))
    if getattr(args, "coefficients", None):
        overrides.append("lens=" + json.dumps({"name": "custom", "kind": "zernike",
                                               "coefficients_file": args.coefficients}))
    if getattr(args, "preset", None):
        overrides.append("lens=" + json.dumps({"name": args.preset, "kind": args.preset}))
    if getattr(args, "mock", None):
        overrides.append(f"stage2.mock={json.dumps(args.mock)}")
    return load_config(args.config, overrides, seed=args.seed)


def open_cache(config: RunConfig) -> _Cache:
    """A bare file name is placed in the privlens data folder"""
    filename = config.paths.cache_file
    if not filename:
        return DummyCache()
    if not os.path.dirname(filename):
        filename = os.path.join(get_data_path(), filename)
    return PSFCache(filename)


def _require_dataset(config: RunConfig, landmarks: bool = False) -> Tuple[List[ImageRecord], list]:
    directory = config.paths.dataset_dir
    if not directory:
        raise ConfigError("No dataset given: set paths.dataset_dir or pass --dataset")
    records, failures = load_dataset(directory, config.paths.landmark_dir if landmarks else None,
                                     config.optics.channels)
    if not records and not failures:
        raise ConfigError(f"Dataset directory {directory} contains no images")
    if not records:
        raise DatasetError(f"None of the {len(failures)} images in {directory} could be read")
    return records, failures


def _stem(name: str) -> str:
    return os.path.splitext(name)[0]


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_")


def cmd_psf(args, config: RunConfig, manifest: Manifest, out_dir: str) -> int:
    spec = config.lens
    if spec.kind == "lowres":
        raise ConfigError(f"Lens '{spec.name}' is a low-resolution camera and has no PSF")
    cache = open_cache(config)
    try:
        lens = build_lens(spec, config.optics, cache)
    finally:
        cache.close()
    psf = lens.psf
    manifest.add_files(write_psf(out_dir, "psf", psf), out_dir)
    report = {
        "lens": spec.name,
        "kind": spec.kind,
        "wavelengths_nm": list(config.optics.wavelengths_nm),
        "size_px": psf.size,
        "mtf_cutoff": args.mtf_cutoff,
        "mtf_highfreq_ratio": [float(v) for v in mtf_highfreq_ratio(psf, args.mtf_cutoff)],
        "central_energy_fraction": central_energy_fraction(psf),
        "crop_loss": list(psf.crop_loss),
    }
    if getattr(lens, "coefficients", None) is not None:
        report["coefficients"] = [float(b) for b in lens.coefficients.beta]
    manifest.add_file(write_json(os.path.join(out_dir, "psf_report.json"), report), out_dir)
    logger.info("PSF of '%s': central fraction %.4f, MTF ratio %s", spec.name,
                report["central_energy_fraction"], report["mtf_highfreq_ratio"])
    return EXIT_OK


def cmd_capture(args, config: RunConfig, manifest: Manifest, out_dir: str) -> int:
    records, failures = _require_dataset(config)
    for _, exc in failures:
        manifest.warn(exc)
    cache = open_cache(config)
    try:
        lens = build_lens(config.lens, config.optics, cache)
    finally:
        cache.close()
    rows = []
    for record in records:
        y = lens.capture(record.image, config.noise, record.image_id)
        path = write_image(os.path.join(out_dir, "captures", _stem(record.name) + ".png"), y, bit_depth=16)
        manifest.add_file(path, out_dir)
        rows.append((record.name, mse(record.image, y), psnr(record.image, y)))
    manifest.add_file(write_csv(os.path.join(out_dir, "capture.csv"), ("image", "mse", "psnr"), rows), out_dir)
    logger.info("Captured %i images through lens '%s'", len(rows), lens.name)
    return EXIT_OK


def _trace_rows(trace: OptimizationTrace):
    return [(r.iteration, r.l_optics, r.l_hmap, r.total, r.mse_mean) for r in trace]


def _checkpoints(trace: OptimizationTrace, every: int) -> List[dict]:
    last = len(trace) - 1
    return [{"iteration": r.iteration, "total": r.total, "beta": list(r.beta)}
            for r in trace if r.iteration % every == 0 or r.iteration == last]


def _write_trace(trace: OptimizationTrace, config: RunConfig, manifest: Manifest, out_dir: str):
    manifest.add_file(write_csv(os.path.join(out_dir, "trace.csv"), TRACE_HEADER, _trace_rows(trace)), out_dir)
    checkpoints = _checkpoints(trace, config.stage1.log_every)
    manifest.add_file(write_json(os.path.join(out_dir, "checkpoints.json"), checkpoints), out_dir)


def cmd_optimize(args, config: RunConfig, manifest: Manifest, out_dir: str) -> int:
    records, failures = _require_dataset(config, landmarks=True)
    for _, exc in failures:
        manifest.warn(exc)
    hyper = config.stage1
    samples = [Stage1Sample(r.image, r.landmarks, r.image_id) for r in records]
    if args.init:
        initial = load_coefficients(args.init)
    else:
        initial = initial_coefficients(hyper.num_coefficients, hyper.init_scale_um, config.seed)

    manager = TaskManager(max_workers=get_thread_limit(), cancel_on_signals=[signal.SIGINT, signal.SIGTERM])
    try:
        beta, trace = optimize_lens(samples, config.optics, hyper, Extractors.proxies(hyper.heatmap_cutoff),
                                    config.noise, initial_beta=initial, seed=config.seed,
                                    task_manager=manager)
    except OptimizationDiverged as e:
        logger.error("Stage I diverged at iteration %i: %s", e.iteration, e.message)
        _write_trace(e.trace, config, manifest, out_dir)
        manifest.warn(e)
        return EXIT_NUMERICAL

    _write_trace(trace, config, manifest, out_dir)
    best = trace.best()
    extra = {"objective": best.total} if best is not None else {}
    manifest.add_file(save_coefficients(os.path.join(out_dir, "coefficients.json"), beta, **extra), out_dir)
    manifest.add_files(write_psf(out_dir, "psf_before", render_psf(initial, config.optics)), out_dir)
    manifest.add_files(write_psf(out_dir, "psf_after", render_psf(beta, config.optics)), out_dir)
    return EXIT_OK


def _attack_methods(args, config: RunConfig) -> List[AttackMethod]:
    methods = list(config.attack.methods)
    if args.methods:
        configured = {m.name: m for m in methods}
        methods = [configured.get(name, AttackMethod(name)) for name in args.methods]
    sweep = args.nsr_sweep if args.nsr_sweep is not None else config.attack.nsr_sweep
    methods = expand_nsr_sweep(methods, sweep)
    if not methods:
        raise ConfigError("No attack methods configured")
    return methods


def _attack_lenses(config: RunConfig) -> List[Lens]:
    specs = list(config.attack.lenses) or [config.lens]
    cache = open_cache(config)
    try:
        return [build_lens(spec, config.optics, cache) for spec in specs]
    finally:
        cache.close()


def cmd_attack(args, config: RunConfig, manifest: Manifest, out_dir: str) -> int:
    methods = _attack_methods(args, config)
    records, failures = _require_dataset(config)
    for _, exc in failures:
        manifest.warn(exc)
    lenses = _attack_lenses(config)
    dump = args.dump_images or config.attack.dump_images
    manager = TaskManager(max_workers=get_thread_limit(), cancel_on_signals=[signal.SIGINT, signal.SIGTERM])
    report = attack_suite([(r.name, r.image) for r in records], lenses, methods, config.noise,
                          task_manager=manager, keep_images=dump)

    rows = [(r.lens, r.method, r.image, r.psnr, r.mse, r.ssim, r.status) for r in report.rows]
    manifest.add_file(write_csv(os.path.join(out_dir, "attack.csv"), ATTACK_HEADER, rows), out_dir)
    for row in report.rows:
        if not row.ok:
            manifest.warn(row.status)
    summary = {
        "rows": len(report.rows),
        "successes": report.successes,
        "failures": report.failures,
        "aggregates": [attr.asdict(agg) for agg in report.aggregates()],
    }
    manifest.add_file(write_json(os.path.join(out_dir, "attack_summary.json"), summary), out_dir)
    for (lens, method, image), x_hat in sorted(report.recovered.items()):
        path = os.path.join(out_dir, "recovered", _slug(lens), _slug(method), _stem(image) + ".png")
        manifest.add_file(write_image(path, x_hat), out_dir)
    if report.successes == 0:
        logger.error("Every attack failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def _load_triples(config: RunConfig):
    root = config.paths.triples_dir
    if not root:
        raise ConfigError("No triples given: set paths.triples_dir or pass --triples")
    channels = config.optics.channels
    source_dir, reference_dir = os.path.join(root, "source"), os.path.join(root, "reference")
    for directory in (source_dir, reference_dir):
        if not os.path.isdir(directory):
            raise ConfigError(f"Missing triples sub-directory: {directory}")
    sources, source_failures = load_dataset(source_dir, channels=channels)
    references, reference_failures = load_dataset(reference_dir, channels=channels)
    per_source = config.stage2.references_per_source
    if not sources or len(references) != len(sources) * per_source:
        raise ConfigError(f"Mismatched triples: {len(sources)} sources and {len(references)} references "
                          f"with {per_source} reference(s) per source")
    landmark_dir = os.path.join(root, "landmarks")
    landmarks = []
    for record in sources:
        sidecar = landmark_path(landmark_dir, record.name)
        landmarks.append(read_landmarks(sidecar) if os.path.exists(sidecar) else None)
    return sources, references, landmarks, source_failures + reference_failures


def cmd_losses(args, config: RunConfig, manifest: Manifest, out_dir: str) -> int:
    sources, references, landmarks, failures = _load_triples(config)
    for _, exc in failures:
        manifest.warn(exc)
    options = config.stage2
    shape = sources[0].image.shape
    cache = open_cache(config)
    try:
        lens = build_lens(config.lens, config.optics, cache)
    finally:
        cache.close()
    bundle = make_bundle(options.mock, shape, options, seed=config.seed)

    k = options.references_per_source
    samples = []
    for i, (record, points) in enumerate(zip(sources, landmarks)):
        m_star = None
        if points is not None:
            m_star = landmark_heatmap_oracle(points, record.image.shape, config.stage1.landmark_sigma_px)
        samples.append(Stage2Sample(
            source=record.image,
            capture=lens.capture(record.image, config.noise, record.image_id),
            references=[r.image for r in references[i * k:(i + 1) * k]],
            m_star=m_star,
            source_domain=options.source_domain,
            target_domain=options.target_domain,
        ))

    breakdown = full_stage2_objective(bundle, samples, options.weights, options.use_heatmap)
    per_source = [dict(full_stage2_objective(bundle, [s], options.weights, options.use_heatmap).to_dict(),
                       source=record.name) for s, record in zip(samples, sources)]
    document = {
        "mock": options.mock,
        "lens": config.lens.name,
        "use_heatmap": options.use_heatmap,
        "weights": attr.asdict(options.weights),
        "components": breakdown.components,
        "total": breakdown.total,
        "pairs": breakdown.pairs,
        "per_source": per_source,
    }
    manifest.add_file(write_json(os.path.join(out_dir, "losses.json"), document), out_dir)
    logger.info("Stage II total %.6f over %i pairs", breakdown.total, breakdown.pairs)
    return EXIT_OK


COMMANDS: Dict[str, Callable] = {
    "psf": cmd_psf,
    "capture": cmd_capture,
    "optimize": cmd_optimize,
    "attack": cmd_attack,
    "losses": cmd_losses,
}


def run(args) -> int:
    config = load_run_config(args)
    out_dir = config.paths.output_dir
    manifest = Manifest.start(args.command, config)
    exit_code = COMMANDS[args.command](args, config, manifest, out_dir)
    manifest.finish(exit_code)
    manifest.write(out_dir)
    return exit_code


def main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=args.log_level, format="%(asctime)s [%(name)s] %(levelname)s: %(message)s")
    try:
        return run(args)
    except PrivLensError as e:
        logger.error("%s", e)
        return e.exit_code if e.exit_code in (EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL) else EXIT_NUMERICAL
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
