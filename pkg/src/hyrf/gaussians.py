"""Explicit Gaussian storage, neural/explicit aggregation and density control."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TrainingError
from .geometry import quat_to_rotation

log = logging.getLogger(__name__)

# Pre-activations are clamped here so float64 sigmoids stay strictly in (0, 1).
LOGIT_CLAMP = 30.0
SPLIT_FACTOR = 1.6
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def sigmoid(x):
    x = np.clip(np.asarray(x, dtype=np.float64), -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _sigmoid_grad(x, s):
    inside = np.abs(np.asarray(x, dtype=np.float64)) < LOGIT_CLAMP
    return s * (1.0 - s) * inside


@dataclass
class ExplicitGaussianSet:
    """The 8 explicit scalars per Gaussian plus densification statistics.

    ``colors``, ``scales`` and ``opacities`` are raw (pre-sigmoid) residuals
    that get added to the neural predictions.
    """

    positions: np.ndarray
    colors: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    grad_accum: np.ndarray = field(default=None)
    grad_count: np.ndarray = field(default=None)

    PARAMS = ("positions", "colors", "scales", "opacities")

    def __post_init__(self):
        n = len(self.positions)
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n, dtype=np.int64)
        self.validate()

    def __len__(self):
        return len(self.positions)

    def validate(self):
        n = len(self.positions)
        shapes = {
            "positions": (n, 3),
            "colors": (n, 3),
            "scales": (n,),
            "opacities": (n,),
            "grad_accum": (n,),
            "grad_count": (n,),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite values")

    @classmethod
    def create(cls, positions, colors=None, scales=None, opacities=None, dtype=np.float32):
        positions = np.asarray(positions, dtype=dtype).reshape(-1, 3)
        n = len(positions)
        if n == 0:
            raise InvalidInputError("a Gaussian set needs at least one Gaussian")
        colors = np.zeros((n, 3), dtype) if colors is None else np.asarray(colors, dtype).reshape(n, 3)
        scales = np.zeros(n, dtype) if scales is None else np.asarray(scales, dtype).reshape(n)
        opacities = np.zeros(n, dtype) if opacities is None else np.asarray(opacities, dtype).reshape(n)
        return cls(positions.copy(), colors.copy(), scales.copy(), opacities.copy())

    def take(self, index):
        """Replace every parallel array by its rows at ``index`` (in place)."""
        for name in self.PARAMS + ("grad_accum", "grad_count"):
            setattr(self, name, getattr(self, name)[index])

    def reset_stats(self):
        self.grad_accum = np.zeros(len(self))
        self.grad_count = np.zeros(len(self), dtype=np.int64)

    def add_stats(self, indices, grad_norms):
        np.add.at(self.grad_accum, indices, grad_norms)
        np.add.at(self.grad_count, indices, 1)


@dataclass
class ActivatedGaussians:
    alpha: np.ndarray      # (N,)
    color: np.ndarray      # (N, 3)
    scale: np.ndarray      # (N, 3), world units
    rotation: np.ndarray   # (N, 4), unit quaternions
    fallback: np.ndarray   # (N,) rows whose neural rotation collapsed to zero


def aggregate(raw_opacity, raw_scale, raw_rotation, raw_color,
              exp_color, exp_scale, exp_opacity, s_max):
    """Combine neural predictions with explicit residuals into render-ready values.

    The scalar explicit scale is broadcast over the three neural scale axes
    before the sigmoid; the result is multiplied by ``s_max`` to get world
    units.
    """
    raw_rotation = np.asarray(raw_rotation, dtype=np.float64)
    alpha = sigmoid(np.asarray(raw_opacity) + exp_opacity)
    color = sigmoid(np.asarray(raw_color) + exp_color)
    scale = sigmoid(np.asarray(raw_scale) + np.asarray(exp_scale)[..., None]) * s_max
    norm = np.linalg.norm(raw_rotation, axis=-1, keepdims=True)
    fallback = norm[..., 0] < 1e-12
    if np.any(fallback):
        log.debug("%d neural rotations collapsed to zero; using identity", int(fallback.sum()))
    rotation = np.where(fallback[..., None], IDENTITY_QUAT, raw_rotation / np.where(fallback[..., None], 1.0, norm))
    return ActivatedGaussians(alpha, color, scale, rotation, fallback)


def aggregate_backward(raw_opacity, raw_scale, raw_rotation, raw_color,
                       exp_color, exp_scale, exp_opacity, s_max, act, grads):
    """Backward of :func:`aggregate`.

    ``grads`` holds upstream gradients ``alpha, color, scale, rotation``.
    Returns a dict with raw (neural) and explicit gradients.
    """
    za = np.asarray(raw_opacity, dtype=np.float64) + exp_opacity
    zc = np.asarray(raw_color, dtype=np.float64) + exp_color
    zs = np.asarray(raw_scale, dtype=np.float64) + np.asarray(exp_scale, dtype=np.float64)[..., None]
    g_za = grads["alpha"] * _sigmoid_grad(za, act.alpha)
    g_zc = grads["color"] * _sigmoid_grad(zc, act.color)
    s_unit = act.scale / s_max
    g_zs = grads["scale"] * s_max * _sigmoid_grad(zs, s_unit)

    raw_rotation = np.asarray(raw_rotation, dtype=np.float64)
    norm = np.linalg.norm(raw_rotation, axis=-1, keepdims=True)
    r = act.rotation
    g_r = grads["rotation"]
    g_rn = (g_r - r * np.sum(r * g_r, axis=-1, keepdims=True)) / np.maximum(norm, 1e-12)
    g_rn = np.where(act.fallback[..., None], 0.0, g_rn)
    return {
        "raw_opacity": g_za,
        "raw_color": g_zc,
        "raw_scale": g_zs,
        "raw_rotation": g_rn,
        "opacities": g_za,
        "colors": g_zc,
        "scales": g_zs.sum(axis=-1),
    }


def densify(gset: ExplicitGaussianSet, grad_threshold, scale_split_threshold,
            activated_scales, s_max, *, rotations=None, rng=None):
    """Clone small and split large Gaussians with high mean screen-space gradient.

    Mutates ``gset`` and returns ``(source, fresh)``: row ``i`` of the new
    set derives from old row ``source[i]``, and ``fresh[i]`` marks rows that
    did not exist before (so optimizer moments can be zeroed).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(gset)
    mean_grad = np.where(gset.grad_count > 0, gset.grad_accum / np.maximum(gset.grad_count, 1), 0.0)
    selected = mean_grad >= grad_threshold
    activated_scales = np.asarray(activated_scales, dtype=np.float64).reshape(n, 3)
    big = activated_scales.max(axis=1) > scale_split_threshold
    clone = selected & ~big
    split = selected & big
    if not np.any(selected):
        gset.reset_stats()
        return np.arange(n), np.zeros(n, dtype=bool)

    keep = np.flatnonzero(~split)
    clone_idx = np.flatnonzero(clone)
    split_idx = np.flatnonzero(split)
    source = np.concatenate([keep, clone_idx, split_idx, split_idx])
    fresh = np.concatenate([np.zeros(len(keep), bool), np.ones(len(clone_idx) + 2 * len(split_idx), bool)])

    positions = gset.positions[source].astype(np.float64)
    scales = gset.scales[source].astype(np.float64)
    if len(split_idx):
        m = len(split_idx)
        parent_scale = np.tile(activated_scales[split_idx], (2, 1))
        offsets = rng.normal(size=(2 * m, 3)) * parent_scale
        if rotations is not None:
            rot = quat_to_rotation(np.tile(np.asarray(rotations)[split_idx], (2, 1)))
            offsets = np.einsum("nij,nj->ni", rot, offsets)
        positions[-2 * m:] += offsets
        # shift the explicit scale so the mean-axis activated scale shrinks by SPLIT_FACTOR
        z = logit(np.clip(parent_scale / s_max, 1e-12, 1 - 1e-12)).mean(axis=1)
        scales[-2 * m:] += logit(sigmoid(z) / SPLIT_FACTOR) - z

    gset.take(source)
    gset.positions = positions.astype(gset.colors.dtype)
    gset.scales = scales.astype(gset.colors.dtype)
    gset.reset_stats()
    return source, fresh


def prune(gset: ExplicitGaussianSet, min_opacity, activated_alpha):
    """Drop Gaussians whose activated opacity is below ``min_opacity``.

    Returns the kept indices (the ``source`` map for optimizer state).
    """
    keep = np.flatnonzero(np.asarray(activated_alpha) >= min_opacity)
    if len(keep) == 0:
        raise TrainingError("pruning removed every Gaussian; training has diverged")
    if len(keep) < len(gset):
        gset.take(keep)
    return keep


def reset_opacity(gset: ExplicitGaussianSet, target_alpha):
    """Clamp the explicit opacity residual to at most ``logit(target_alpha)``."""
    if not 0.0 < target_alpha < 1.0:
        raise InvalidInputError("reset target must lie in (0, 1)")
    cap = logit(target_alpha)
    gset.opacities = np.minimum(gset.opacities, np.asarray(cap, dtype=gset.opacities.dtype))
