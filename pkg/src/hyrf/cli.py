"""Command-line entry point: ``hyrf <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing/corrupt files), 3 numeric divergence during training.
"""

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .camera import Camera
from .checkpoint import load_checkpoint
from .codec.bundle import CompressionConfig, compress_file, decompress_file
from .config import build_model, load_config
from .data import load_dataset
from .errors import (
    ConfigurationError,
    CorruptStreamError,
    DataError,
    DivergenceError,
    InvalidInputError,
    TrainingError,
)
from .imageio import write_png
from .metrics import psnr, ssim
from .synth import SynthOptions, synth_scene
from .train import fit

log = logging.getLogger("hyrf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_data(path, run):
    background = (1.0, 1.0, 1.0) if run.data.white_background else (0.0, 0.0, 0.0)
    return load_dataset(path, run.data.format, background=background, test_every=run.data.test_every,
                        n_fallback_points=run.data.n_fallback_points, seed=run.data.seed)


def cmd_train(args):
    overrides = list(args.set or [])
    if args.iterations is not None:
        overrides.append(f"train.iterations={args.iterations}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    run = load_config(args.config, overrides)
    ds = _load_data(args.data, run)
    views = ds.views("train") or ds.views()
    model = build_model(ds, run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(run.to_text())
    log.info("training on %d views, %d initial points, %d iterations",
             len(views), len(ds.points), run.train.iterations)
    trainer, rows = fit(model, views, run.train, out)
    print(f"wrote {out / 'model.ckpt'} ({len(model.gaussians)} Gaussians, {trainer.iteration} iterations)")
    return EXIT_OK


def _camera_arg(spec, data_dir):
    if spec.lstrip("-").isdigit():
        if data_dir is None:
            raise UsageError("--camera <index> needs --data to pick the camera from")
        ds = load_dataset(data_dir)
        idx = int(spec)
        if not 0 <= idx < len(ds):
            raise UsageError(f"camera index {idx} out of range [0, {len(ds)})")
        return ds.cameras[idx]
    path = Path(spec)
    if not path.is_file():
        raise DataError(f"{path}: camera file not found")
    try:
        return Camera.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a camera description ({exc})") from None


def cmd_render(args):
    out = Path(args.out)
    if not out.parent.is_dir():
        raise InvalidInputError(f"output directory {out.parent} does not exist")
    model, _ = load_checkpoint(args.checkpoint)
    cam = _camera_arg(args.camera, args.data)
    result = model.render(cam, tau_t=args.tau_t)
    write_png(out, np.clip(result.image, 0.0, 1.0))
    if args.transmittance:
        write_png(args.transmittance, result.target.transmittance)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    views = ds.views(args.split) or ds.views()
    rows = []
    print(f"{'view':>5} {'PSNR':>9} {'SSIM':>8}")
    for i, (cam, gt) in enumerate(views):
        img = model.render(cam).image
        p, s = psnr(img, gt), ssim(img, gt)
        rows.append((p, s))
        print(f"{i:>5} {p:>9.3f} {s:>8.5f}")
    mean_p = float(np.mean([p for p, _ in rows]))
    mean_s = float(np.mean([s for _, s in rows]))
    print(f"{'mean':>5} {mean_p:>9.3f} {mean_s:>8.5f}")
    if args.json:
        Path(args.json).write_text(json.dumps({"psnr": [p for p, _ in rows], "ssim": [s for _, s in rows],
                                               "mean_psnr": mean_p if math.isfinite(mean_p) else "inf",
                                               "mean_ssim": mean_s}, indent=2))
    return EXIT_OK


def cmd_compress(args):
    cfg = CompressionConfig(args.stages, args.codebook_size, args.lloyd_iters, args.seed)
    size = compress_file(args.checkpoint, args.out, cfg)
    raw = Path(args.checkpoint).stat().st_size
    print(f"wrote {args.out}: {size} bytes ({size / raw:.3f} of the {raw}-byte checkpoint)")
    return EXIT_OK


def cmd_decompress(args):
    decompress_file(args.bundle, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_synth(args):
    opts = SynthOptions(seed=args.seed, n_gaussians=args.n, n_cameras=args.cameras,
                        n_test=args.test_views, size=args.size)
    ds, _ = synth_scene(opts, args.out)
    print(f"wrote {len(ds)} views, gt.ckpt and hyrf.ini to {args.out}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="hyrf", description="Hybrid radiance fields: train, render, evaluate, compress.")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads; 1 gives the reproducible single-threaded mode")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a model to a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config key (repeatable)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render one view to PNG")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--camera", required=True, help="dataset camera index (with --data) or camera JSON file")
    r.add_argument("--data")
    r.add_argument("--out", required=True)
    r.add_argument("--transmittance", help="also write final transmittance as a grayscale PNG")
    r.add_argument("--tau-t", type=float, default=None, dest="tau_t")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM per test view")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--json", help="also write the table as JSON")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compress", help="checkpoint -> compressed bundle")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--stages", type=int, default=6)
    c.add_argument("--codebook-size", type=int, default=64, dest="codebook_size")
    c.add_argument("--lloyd-iters", type=int, default=20, dest="lloyd_iters")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="compressed bundle -> checkpoint")
    d.add_argument("--bundle", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompress)

    s = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=64, help="number of ground-truth Gaussians")
    s.add_argument("--cameras", type=int, default=8)
    s.add_argument("--test-views", type=int, default=2, dest="test_views")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:      # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s", stream=sys.stderr)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ConfigurationError, InvalidInputError) as exc:
        print(f"hyrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorruptStreamError, TrainingError, FileNotFoundError) as exc:
        print(f"hyrf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"hyrf: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
