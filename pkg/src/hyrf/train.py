"""Optimization loop: loss, Adam over four parameter groups, density control."""

import csv
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import gaussians as gs
from .errors import DivergenceError, InvalidInputError
from .metrics import loss_and_grad, psnr
from .optim import Adam, exponential_lr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    lambda_ssim: float = 0.2
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_color: float = 2.5e-3
    lr_scale: float = 2.5e-3
    lr_opacity: float = 2.5e-3
    lr_hash: float = 1e-2
    lr_decoder: float = 1e-3
    densify_from: int = 500
    densify_until: int = 15000
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    opacity_reset_interval: int = 3000
    opacity_reset_value: float = 0.01
    prune_opacity: float = 0.005
    log_interval: int = 10
    checkpoint_interval: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise InvalidInputError("lambda_ssim must lie in [0, 1]")
        rates = [self.lr_position, self.lr_color, self.lr_scale, self.lr_opacity, self.lr_hash, self.lr_decoder]
        if any(not 0 <= r < float("inf") for r in rates):
            raise InvalidInputError("learning rates must be finite and non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class Trainer:
    """Owns the optimizer state and the schedule for one model."""

    def __init__(self, model, config: TrainConfig = TrainConfig()):
        self.model = model
        self.config = config
        self.optimizer = Adam()
        self.iteration = 0
        self.rng = np.random.default_rng(config.seed)
        # positions move in world units; scale their step by the scene size
        self.spatial_scale = 0.5 * model.aabb.diagonal

    def position_lr(self):
        c = self.config
        if c.lr_position == 0:
            return 0.0
        return self.spatial_scale * exponential_lr(
            self.iteration, c.lr_position, c.lr_position_final, c.iterations
        )

    def train_step(self, cam, gt):
        """One forward/backward/update on a single view; returns scalar metrics."""
        c = self.config
        model = self.model
        g = model.gaussians
        model.zero_grad()
        out = model.render(cam, need_cache=True)
        (total, l1, ssim_val), grad_image = loss_and_grad(out.image, gt, c.lambda_ssim)
        if not np.isfinite(total):
            raise DivergenceError(
                f"non-finite loss at iteration {self.iteration}: N={len(g)}, "
                f"finite positions={np.isfinite(g.positions).all()}, "
                f"finite image={np.isfinite(out.image).all()}"
            )
        grads = model.backward(out, grad_image)

        # screen-space gradient magnitude in NDC units, as 3DGS accumulates it
        ndc_scale = np.array([0.5 * cam.width, 0.5 * cam.height])
        g.add_stats(grads["visible"], np.linalg.norm(grads["mean2d_grad"] * ndc_scale, axis=1))

        opt = self.optimizer
        opt.step("positions", g.positions, grads["positions"], self.position_lr())
        opt.step("colors", g.colors, grads["colors"], c.lr_color)
        opt.step("scales", g.scales, grads["scales"], c.lr_scale)
        opt.step("opacities", g.opacities, grads["opacities"], c.lr_opacity)
        for name, param, grad in model.neural_parameters():
            lr = c.lr_hash if "field" in name else c.lr_decoder
            opt.step(name, param, grad, lr)

        # NaN Gaussians are culled silently, so the loss alone would not notice them
        bad = [k for k in g.PARAMS if not np.all(np.isfinite(getattr(g, k)))]
        if bad:
            raise DivergenceError(f"non-finite {', '.join(bad)} after the update at iteration {self.iteration}")

        self.iteration += 1
        self._density_control()
        return {
            "iteration": self.iteration,
            "loss": total,
            "l1": l1,
            "ssim": ssim_val,
            "psnr": psnr(np.clip(out.image, 0, 1), gt),
            "n_gaussians": len(model.gaussians),
        }

    def _remap_explicit(self, source, fresh):
        for name in gs.ExplicitGaussianSet.PARAMS:
            self.optimizer.remap(name, source, fresh)

    def _density_control(self):
        c = self.config
        it = self.iteration
        model = self.model
        if c.densify_from <= it < c.densify_until and c.densify_interval > 0 and it % c.densify_interval == 0:
            alpha, scales, rotations = model.activated_geometry()
            source, fresh = gs.densify(
                model.gaussians, c.densify_grad_threshold, c.percent_dense * self.spatial_scale,
                scales, model.s_max, rotations=rotations, rng=self.rng,
            )
            self._remap_explicit(source, fresh)
            keep = gs.prune(model.gaussians, c.prune_opacity, model.activated_opacity())
            self._remap_explicit(keep, np.zeros(len(keep), dtype=bool))
            log.debug("iteration %d: densified to %d Gaussians", it, len(model.gaussians))
        if c.opacity_reset_interval > 0 and it % c.opacity_reset_interval == 0 and it < c.densify_until:
            gs.reset_opacity(model.gaussians, c.opacity_reset_value)
            st = self.optimizer.state.get("opacities")
            if st is not None:
                st["m"][:] = 0
                st["v"][:] = 0


def fit(model, views, config: TrainConfig, out_dir=None, *, on_log=None):
    """Train ``model`` on ``views`` (list of ``(camera, image)``) for ``config.iterations``.

    Writes ``metrics.csv`` (one row every ``log_interval`` iterations) and
    ``model.ckpt`` under ``out_dir`` when given. A checkpoint is flushed
    even if training is interrupted.
    """
    from .checkpoint import save_checkpoint

    trainer = Trainer(model, config)
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    writer = fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "psnr", "n_gaussians", "wall_time"])
    start = time.perf_counter()
    order = []
    diverged = False
    try:
        for _ in range(config.iterations):
            if not order:
                order = list(trainer.rng.permutation(len(views)))
            cam, gt = views[order.pop()]
            metrics = trainer.train_step(cam, gt)
            it = metrics["iteration"]
            if config.log_interval > 0 and it % config.log_interval == 0:
                row = [it, metrics["loss"], metrics["psnr"], metrics["n_gaussians"], time.perf_counter() - start]
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    fh.flush()
                log.info("iteration=%d loss=%.6f psnr=%.3f n_gaussians=%d", *row[:4])
                if on_log is not None:
                    on_log(metrics)
            if out_dir is not None and config.checkpoint_interval > 0 and it % config.checkpoint_interval == 0:
                save_checkpoint(out_dir / f"model_{it:06d}.ckpt", model, iteration=it)
    except DivergenceError:
        diverged = True
        if out_dir is not None:
            g = model.gaussians
            np.savez(out_dir / "divergence_dump.npz", positions=g.positions, colors=g.colors,
                     scales=g.scales, opacities=g.opacities)
        raise
    finally:
        if fh is not None:
            fh.close()
        if out_dir is not None and not diverged:
            save_checkpoint(out_dir / "model.ckpt", model, iteration=trainer.iteration)
    return trainer, rows
