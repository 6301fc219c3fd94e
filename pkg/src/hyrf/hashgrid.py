"""Multi-resolution hash encoding and view-direction positional encoding."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

PRIMES = (1, 2654435761, 805459861)

# 8 voxel corners as (dx, dy, dz) offsets in {0, 1}.
CORNERS = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)
SIGN = np.where(CORNERS == 1, 1.0, -1.0)


@dataclass(frozen=True)
class HashFieldConfig:
    n_levels: int = 16
    features_per_entry: int = 2
    log2_max_entries: int = 18
    base_resolution: int = 16
    finest_resolution: int = 2048

    def __post_init__(self):
        if self.n_levels < 1 or self.features_per_entry < 1:
            raise InvalidInputError("need at least one level and one feature per entry")
        if self.base_resolution < 1 or not 1 <= self.log2_max_entries <= 32:
            raise InvalidInputError("base resolution must be positive and log2 table size in [1, 32]")
        res = self.resolutions
        if any(b <= a for a, b in zip(res, res[1:])):
            raise InvalidInputError(f"level resolutions must strictly increase, got {res}")

    @property
    def growth_factor(self) -> float:
        if self.n_levels == 1:
            return 1.0
        return float(np.exp(
            (np.log(self.finest_resolution) - np.log(self.base_resolution)) / (self.n_levels - 1)
        ))

    @property
    def resolutions(self):
        b = self.growth_factor
        return [int(np.floor(self.base_resolution * b**level + 1e-9)) for level in range(self.n_levels)]

    @property
    def table_sizes(self):
        cap = 1 << self.log2_max_entries
        return [min((r + 1) ** 3, cap) for r in self.resolutions]

    @property
    def output_dim(self) -> int:
        return self.n_levels * self.features_per_entry


def corner_indices(corners, resolution, table_size):
    """Table rows for integer vertex coordinates ``corners`` (..., 3).

    Dense row-major indexing when the whole level fits in the table,
    otherwise the XOR-of-primes spatial hash with 32-bit wraparound.
    """
    corners = corners.astype(np.uint64)
    side = resolution + 1
    if side**3 <= table_size:
        return (corners[..., 0] + side * (corners[..., 1] + side * corners[..., 2])).astype(np.int64)
    h = corners[..., 0] * np.uint64(PRIMES[0])
    h ^= corners[..., 1] * np.uint64(PRIMES[1])
    h ^= corners[..., 2] * np.uint64(PRIMES[2])
    h &= np.uint64(0xFFFFFFFF)
    return (h % np.uint64(table_size)).astype(np.int64)


def _level_lookup(points, resolution, table_size):
    """Rows ``(N, 8)``, trilinear weights ``(N, 8)`` and per-axis factors ``(N, 2, 3)``.

    ``axis_f[:, b, a]`` is the weight factor along axis ``a`` for the lower
    (b=0) or upper (b=1) vertex. Both the row index and the weight separate
    over axes, so they are built from per-axis pieces instead of 8 full
    corner evaluations; the rows equal :func:`corner_indices`.
    """
    scaled = points * resolution
    base = np.clip(np.floor(scaled), 0, resolution - 1).astype(np.int64)
    frac = scaled - base
    axis_f = np.stack([1.0 - frac, frac], axis=1)
    ends = np.stack([base, base + 1], axis=1)              # (N, 2, 3)
    cx, cy, cz = CORNERS[:, 0], CORNERS[:, 1], CORNERS[:, 2]
    side = resolution + 1
    if table_size & (table_size - 1) and side**3 > table_size:
        idx = corner_indices(base[:, None, :] + CORNERS, resolution, table_size)
    elif side**3 <= table_size:
        idx = ends[:, cx, 0] + side * ends[:, cy, 1] + side * side * ends[:, cz, 2]
    else:
        # hashed levels have a power-of-two table, and coordinates stay far
        # below 2^31, so int64 products neither overflow nor need the 32-bit wrap
        hashed = ends * np.asarray(PRIMES, dtype=np.int64)
        idx = (hashed[:, cx, 0] ^ hashed[:, cy, 1] ^ hashed[:, cz, 2]) & (table_size - 1)
    weights = axis_f[:, cx, 0] * axis_f[:, cy, 1] * axis_f[:, cz, 2]
    return idx, weights, axis_f


def trilinear_weights(frac):
    """The 8 trilinear weights for fractional offsets ``frac`` (..., 3)."""
    frac = np.asarray(frac, dtype=np.float64)
    factors = np.where(CORNERS == 1, frac[..., None, :], 1.0 - frac[..., None, :])
    return factors.prod(axis=-1)


class HashField:
    """Trainable multi-resolution hash grid.

    ``tables[l]`` has shape ``(table_sizes[l], features_per_entry)``;
    ``grads`` mirrors it and is only ever added to by :meth:`backward`.
    """

    def __init__(self, config: HashFieldConfig, tables=None, *, rng=None, dtype=np.float32):
        self.config = config
        if tables is None:
            rng = np.random.default_rng(0) if rng is None else rng
            tables = [
                rng.uniform(-1e-4, 1e-4, size=(n, config.features_per_entry)).astype(dtype)
                for n in config.table_sizes
            ]
        self.tables = [np.asarray(t) for t in tables]
        for t, n in zip(self.tables, config.table_sizes):
            if t.shape != (n, config.features_per_entry):
                raise InvalidInputError(f"table shape {t.shape} does not match config ({n}, {config.features_per_entry})")
        self.grads = [np.zeros_like(t) for t in self.tables]

    @property
    def output_dim(self):
        return self.config.output_dim

    def zero_grad(self):
        for g in self.grads:
            g.fill(0)

    def parameters(self):
        return self.tables

    @staticmethod
    def _check_points(points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise InvalidInputError("points must have shape (N, 3)")
        if np.any(~((points > 0) & (points < 1))):
            raise InvalidInputError("hash encoding requires points strictly inside (0, 1)^3; contract first")
        return points

    def encode(self, points):
        """Features of shape (N, n_levels * features_per_entry)."""
        points = self._check_points(points)
        cfg = self.config
        out = np.empty((len(points), cfg.output_dim), dtype=np.result_type(points, self.tables[0]))
        for level, (res, size) in enumerate(zip(cfg.resolutions, cfg.table_sizes)):
            idx, weights, _ = _level_lookup(points, res, size)
            feats = self.tables[level][idx]
            f = cfg.features_per_entry
            out[:, level * f:(level + 1) * f] = np.einsum("nc,ncf->nf", weights, feats)
        return out

    def backward(self, points, grad_features, *, need_position_grad=True):
        """Accumulate table gradients; return d(loss)/d(points) (N, 3)."""
        points = self._check_points(points)
        cfg = self.config
        grad_features = np.asarray(grad_features)
        if grad_features.shape != (len(points), cfg.output_dim):
            raise InvalidInputError(
                f"upstream gradient shape {grad_features.shape} != {(len(points), cfg.output_dim)}"
            )
        f = cfg.features_per_entry
        grad_points = np.zeros_like(points)
        for level, (res, size) in enumerate(zip(cfg.resolutions, cfg.table_sizes)):
            g = grad_features[:, level * f:(level + 1) * f]
            if not np.any(g):
                continue
            idx, weights, axis_f = _level_lookup(points, res, size)
            flat_idx = idx.ravel()
            for k in range(f):
                contrib = (weights * g[:, k:k + 1]).ravel()
                self.grads[level][:, k] += np.bincount(flat_idx, weights=contrib, minlength=size).astype(
                    self.grads[level].dtype, copy=False
                )
            if need_position_grad:
                feats = self.tables[level][idx]
                dfeat = np.einsum("ncf,nf->nc", feats, g)
                factors = axis_f[:, CORNERS, np.arange(3)]      # (N, 8, 3)
                for axis in range(3):
                    a, b = [o for o in range(3) if o != axis]
                    dw = SIGN[None, :, axis] * factors[:, :, a] * factors[:, :, b]
                    grad_points[:, axis] += res * np.sum(dw * dfeat, axis=1)
        return grad_points


def encode_direction(p, cam_pos, n_frequencies=4):
    """Unit view direction followed by sin/cos bands at frequencies 2^k * pi.

    Output layout: ``[d, sin(pi d), cos(pi d), sin(2 pi d), cos(2 pi d), ...]``.
    """
    v = np.asarray(p, dtype=np.float64) - np.asarray(cam_pos, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise InvalidInputError("point coincides with the camera; view direction undefined")
    return positional_encoding(v / norm, n_frequencies)


def positional_encoding(d, n_frequencies):
    bands = [d]
    for k in range(n_frequencies):
        arg = (2.0**k) * np.pi * d
        bands.append(np.sin(arg))
        bands.append(np.cos(arg))
    return np.concatenate(bands, axis=-1)


def encode_direction_backward(p, cam_pos, grad_enc, n_frequencies=4):
    """Gradient of :func:`encode_direction` with respect to ``p``."""
    v = np.asarray(p, dtype=np.float64) - np.asarray(cam_pos, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    d = v / norm
    grad_d = grad_enc[..., 0:3].copy()
    for k in range(n_frequencies):
        freq = (2.0**k) * np.pi
        arg = freq * d
        base = 3 + 6 * k
        grad_d += grad_enc[..., base:base + 3] * freq * np.cos(arg)
        grad_d -= grad_enc[..., base + 3:base + 6] * freq * np.sin(arg)
    # d(v/|v|)/dv = (I - d d^T) / |v|
    return (grad_d - d * np.sum(d * grad_d, axis=-1, keepdims=True)) / norm


def direction_encoding_dim(n_frequencies):
    return 3 + 6 * n_frequencies
