"""Synthetic scenes with known ground truth for closed-loop tests.

The ground truth is itself a hybrid model whose neural parts are constant:
the geometry decoder is zero except for the identity rotation bias, and
the color decoder only carries a bias that equals the background color
logit. Every Gaussian is then isotropic with its appearance fully given by
the explicit attributes, so a trainable model can represent it exactly.
Images are rendered from cameras read back from the written dataset, which
makes reloading and re-rendering reproduce them bit for bit.
"""

import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import look_at
from .checkpoint import load_checkpoint, save_checkpoint
from .data import camera_to_transform, load_dataset, write_ply
from .errors import InvalidInputError
from .gaussians import ExplicitGaussianSet, logit
from .geometry import Aabb
from .hashgrid import HashField, direction_encoding_dim
from .mlp import GEO_ROTATION, color_decoder, geometry_decoder
from .model import HybridModel, ModelConfig

# tiny neural parts: they are zeroed anyway
GT_MODEL_CONFIG = ModelConfig(n_levels=2, features_per_entry=2, base_resolution=2, finest_resolution=4,
                              log2_hash_size=6, hidden_width=4, hidden_layers=1)


@dataclass(frozen=True)
class SynthOptions:
    seed: int = 0
    n_gaussians: int = 64
    n_cameras: int = 8
    n_test: int = 2
    size: int = 64
    fov_x: float = 0.69
    orbit_radius: float = 4.0
    extent: float = 0.8           # positions drawn in [-extent, extent]^3
    scale_range: tuple = (0.08, 0.2)
    opacity_range: tuple = (0.5, 0.95)
    s_max: float = 0.25
    background: tuple = (0.1, 0.1, 0.15)
    init_jitter: float = 0.05

    def __post_init__(self):
        if self.n_gaussians < 1:
            raise InvalidInputError("a synthetic scene needs at least one Gaussian")
        if self.n_cameras < 1 or self.n_test < 0 or self.size < 1:
            raise InvalidInputError("need >= 1 training camera, >= 0 test cameras and a positive size")
        if not 0 < self.scale_range[0] <= self.scale_range[1] < self.s_max:
            raise InvalidInputError("scale_range must lie inside (0, s_max)")


def ground_truth_model(positions, colors, scales, opacities, s_max, background,
                       config: ModelConfig = GT_MODEL_CONFIG, aabb: Aabb = None):
    """Hybrid model rendering isotropic Gaussians with the given activated attributes.

    ``scales`` are world units (< ``s_max``); ``colors`` and ``opacities`` in (0, 1).
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    bg_logit = logit(np.asarray(background, dtype=np.float64))
    gaussians = ExplicitGaussianSet.create(
        positions,
        logit(np.asarray(colors, dtype=np.float64)) - bg_logit,
        logit(np.asarray(scales, dtype=np.float64) / s_max),
        logit(np.asarray(opacities, dtype=np.float64)),
    )
    geo_cfg, rad_cfg = config.geometry_field_config(), config.radiance_field_config()
    geo_field = HashField(geo_cfg, [np.zeros((s, geo_cfg.features_per_entry), np.float32)
                                    for s in geo_cfg.table_sizes])
    rad_field = HashField(rad_cfg, [np.zeros((s, rad_cfg.features_per_entry), np.float32)
                                    for s in rad_cfg.table_sizes])
    geo_dec = geometry_decoder(geo_cfg.output_dim, config.hidden_width, config.hidden_layers)
    col_dec = color_decoder(rad_cfg.output_dim + direction_encoding_dim(config.n_frequencies),
                            config.hidden_width, config.hidden_layers)
    for net in (geo_dec, col_dec):
        for arr in net.weights + net.biases:
            arr.fill(0)
    geo_dec.biases[-1][GEO_ROTATION] = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)
    col_dec.biases[-1][:] = bg_logit.astype(np.float32)
    if aabb is None:
        aabb = Aabb.from_points(np.concatenate([positions, [positions.min(0) - 1, positions.max(0) + 1]]))
    cfg = ModelConfig(**{**config.to_dict(), "s_max": float(s_max)})
    return HybridModel(gaussians, geo_field, rad_field, geo_dec, col_dec, aabb, cfg, s_max)


def orbit_cameras(n, radius, size, fov_x, phase=0.0):
    cams = []
    for i in range(n):
        azim = phase + 2 * np.pi * i / n
        elev = 0.35 * (1 if i % 2 == 0 else -0.6)
        eye = radius * np.array([np.cos(elev) * np.cos(azim), np.sin(elev), np.cos(elev) * np.sin(azim)])
        cams.append(look_at(eye, [0.0, 0.0, 0.0], up=(0.0, 1.0, 0.0), fov_x=fov_x, width=size, height=size))
    return cams


def recommended_config_text(opts: SynthOptions):
    """Training config suited to the scene: fixed AABB, s_max matching the ground truth."""
    e = opts.extent + 0.2
    return (
        "[model]\n"
        "scene_class = synthetic\n"
        f"s_max = {opts.s_max!r}\n"
        "\n[data]\n"
        "aabb_mode = fixed\n"
        f"aabb = {-e!r}, {-e!r}, {-e!r}, {e!r}, {e!r}, {e!r}\n"
    )


def synth_scene(opts: SynthOptions = SynthOptions(), out_dir=None):
    """Generate a scene; returns ``(dataset, gt_model)``.

    With ``out_dir`` the dataset (transforms json, ``.npy`` images, PLY
    initial points), ``gt.ckpt`` and ``hyrf.ini`` are written there and the
    returned dataset is the one loaded back from disk.
    """
    rng = np.random.default_rng(opts.seed)
    n = opts.n_gaussians
    positions = rng.uniform(-opts.extent, opts.extent, size=(n, 3))
    colors = rng.uniform(0.1, 0.95, size=(n, 3))
    scales = rng.uniform(*opts.scale_range, size=n)
    opacities = rng.uniform(*opts.opacity_range, size=n)
    init_points = positions + rng.normal(0.0, opts.init_jitter, size=(n, 3))
    init_colors = np.clip(colors + rng.normal(0.0, 0.1, size=(n, 3)), 0.0, 1.0)

    train = orbit_cameras(opts.n_cameras, opts.orbit_radius, opts.size, opts.fov_x)
    test = orbit_cameras(opts.n_test, opts.orbit_radius, opts.size, opts.fov_x, phase=np.pi / max(opts.n_cameras, 1))

    if out_dir is None:
        with tempfile.TemporaryDirectory() as tmp:
            return _write_scene(opts, Path(tmp), positions, colors, scales, opacities,
                                init_points, init_colors, train, test)
    return _write_scene(opts, Path(out_dir), positions, colors, scales, opacities,
                        init_points, init_colors, train, test)


def _write_scene(opts, out, positions, colors, scales, opacities, init_points, init_colors, train, test):
    out.mkdir(parents=True, exist_ok=True)
    gt = ground_truth_model(positions, colors, scales, opacities, opts.s_max, opts.background)
    save_checkpoint(out / "gt.ckpt", gt)
    gt, _ = load_checkpoint(out / "gt.ckpt")
    write_ply(out / "points3d.ply", init_points, init_colors)
    (out / "hyrf.ini").write_text(recommended_config_text(opts))

    # camera files first; images are filled in after reloading the cameras
    for split, cams in (("train", train), ("test", test)):
        (out / split).mkdir(exist_ok=True)
        frames = [{"file_path": f"./{split}/r_{i:03d}.npy", "transform_matrix": camera_to_transform(c)}
                  for i, c in enumerate(cams)]
        meta = {"camera_angle_x": opts.fov_x, "frames": frames}
        (out / f"transforms_{split}.json").write_text(json.dumps(meta, indent=2))
        for i, cam in enumerate(cams):
            np.save(out / split / f"r_{i:03d}.npy", np.zeros((cam.height, cam.width, 3)))

    # re-render through the cameras as the loader sees them
    ds = load_dataset(out, "transforms-json")
    counters = {"train": 0, "test": 0}
    for k, (cam, split) in enumerate(zip(ds.cameras, ds.splits)):
        img = gt.render(cam).image
        np.save(out / split / f"r_{counters[split]:03d}.npy", img)
        ds.images[k] = img
        counters[split] += 1
    return ds, gt
