"""Visibility pre-culling, sorted alpha-blend splatting and background compositing.

Per-pixel semantics of :func:`rasterize`: Gaussians are visited front to
back by camera depth (ties broken by index). Each contributes
``a = min(0.99, alpha * exp(-q/2))`` where ``q`` is the Mahalanobis distance
of the pixel centre under the 2D covariance; contributions with
``a < 1/255`` are skipped. Color accumulates as ``sum c_i a_i T_i`` with
``T_i = prod_{j<i} (1 - a_j)``. The 1/255 cutoff gives every splat a hard
elliptical support, which is what makes tiling and pre-culling exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .geometry import contract, normalize_to_aabb, ray_sphere_distance
from .gaussians import _sigmoid_grad, sigmoid
from .hashgrid import positional_encoding
from .mlp import decode_color

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
DET_MIN = 1e-12
TILE = 16


@dataclass
class CullResult:
    keep_mask: np.ndarray
    kept_indices: np.ndarray


def precull(positions, cam, tol=0.15):
    """Keep points in front of the near plane whose projection lands in the
    image frame widened by ``tol`` in normalized device coordinates."""
    t = cam.world_to_camera(np.asarray(positions, dtype=np.float64))
    z = t[:, 2]
    in_front = z > cam.near
    zs = np.where(in_front, z, 1.0)
    x_ndc = 2.0 * (cam.fx * t[:, 0] / zs + cam.cx) / cam.width - 1.0
    y_ndc = 2.0 * (cam.fy * t[:, 1] / zs + cam.cy) / cam.height - 1.0
    keep = in_front & (np.abs(x_ndc) <= 1.0 + tol) & (np.abs(y_ndc) <= 1.0 + tol)
    return CullResult(keep, np.flatnonzero(keep))


@dataclass
class Splats:
    """Projected, activated Gaussians ready for rasterization."""

    means2d: np.ndarray   # (M, 2) pixels
    cov2d: np.ndarray     # (M, 2, 2)
    depths: np.ndarray    # (M,)
    alphas: np.ndarray    # (M,)
    colors: np.ndarray    # (M, 3)

    def __len__(self):
        return len(self.depths)


@dataclass
class RenderTarget:
    color: np.ndarray          # (H, W, 3)
    transmittance: np.ndarray  # (H, W)
    skipped: int = 0           # splats dropped for a singular covariance


@dataclass
class RasterCache:
    splats: Splats
    width: int
    height: int
    order: np.ndarray
    conics: np.ndarray
    tiles: list = field(default_factory=list)
    target: RenderTarget = None


def _conics(cov2d):
    a, b, c = cov2d[:, 0, 0], 0.5 * (cov2d[:, 0, 1] + cov2d[:, 1, 0]), cov2d[:, 1, 1]
    det = a * c - b * b
    ok = det >= DET_MIN
    safe = np.where(ok, det, 1.0)
    conic = np.stack([np.stack([c, -b], -1), np.stack([-b, a], -1)], -2) / safe[:, None, None]
    return conic, ok


def _tile_binning(splats, conics, ok, width, height, tile):
    """Assign depth-ordered splat indices to the tiles their support touches."""
    alphas = np.asarray(splats.alphas, dtype=np.float64)
    live = ok & (alphas >= ALPHA_MIN)
    qmax = 2.0 * np.log(np.maximum(alphas, ALPHA_MIN) * 255.0)
    rx = np.sqrt(np.maximum(qmax * splats.cov2d[:, 0, 0], 0.0)) + 1.0
    ry = np.sqrt(np.maximum(qmax * splats.cov2d[:, 1, 1], 0.0)) + 1.0
    mx, my = splats.means2d[:, 0], splats.means2d[:, 1]
    order = np.argsort(splats.depths, kind="stable")
    order = order[live[order]]
    tiles = []
    for y0 in range(0, height, tile):
        y1 = min(y0 + tile, height)
        for x0 in range(0, width, tile):
            x1 = min(x0 + tile, width)
            hit = (mx[order] + rx[order] >= x0) & (mx[order] - rx[order] <= x1) & \
                  (my[order] + ry[order] >= y0) & (my[order] - ry[order] <= y1)
            tiles.append((y0, y1, x0, x1, order[hit]))
    return order, tiles


def _tile_alphas(splats, conics, idx, y0, y1, x0, x1):
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px = xs.ravel() + 0.5
    py = ys.ravel() + 0.5
    dx = px[None, :] - splats.means2d[idx, 0:1]
    dy = py[None, :] - splats.means2d[idx, 1:2]
    ca = conics[idx, 0, 0][:, None]
    cb = conics[idx, 0, 1][:, None]
    cc = conics[idx, 1, 1][:, None]
    q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
    raw = np.asarray(splats.alphas, dtype=np.float64)[idx][:, None] * np.exp(-0.5 * q)
    a = np.minimum(raw, ALPHA_MAX)
    a = np.where(raw >= ALPHA_MIN, a, 0.0)
    return a, raw, dx, dy


def _exclusive_cumprod(one_minus):
    t = np.cumprod(one_minus, axis=0)
    return np.concatenate([np.ones((1,) + t.shape[1:]), t[:-1]], axis=0), t[-1]


def rasterize(splats: Splats, width, height, *, tile=TILE, need_cache=False):
    """Front-to-back alpha compositing of ``splats`` into an H x W image."""
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    m = len(splats)
    conics = np.zeros((m, 2, 2))
    skipped = 0
    order = np.zeros(0, dtype=np.int64)
    tiles = []
    if m:
        conics, ok = _conics(np.asarray(splats.cov2d, dtype=np.float64))
        skipped = int(np.sum(~ok))
        order, tiles = _tile_binning(splats, conics, ok, width, height, tile)
        colors = np.asarray(splats.colors, dtype=np.float64)
        for y0, y1, x0, x1, idx in tiles:
            if len(idx) == 0:
                continue
            a, _, _, _ = _tile_alphas(splats, conics, idx, y0, y1, x0, x1)
            t_excl, t_final = _exclusive_cumprod(1.0 - a)
            w = a * t_excl
            color[y0:y1, x0:x1] = (w.T @ colors[idx]).reshape(y1 - y0, x1 - x0, 3)
            trans[y0:y1, x0:x1] = t_final.reshape(y1 - y0, x1 - x0)
    target = RenderTarget(color, trans, skipped)
    if need_cache:
        return target, RasterCache(splats, width, height, order, conics, tiles, target)
    return target


def rasterize_backward(cache: RasterCache, grad_color, grad_transmittance=None):
    """Gradients of a scalar loss with respect to every splat attribute.

    ``grad_color`` is d(loss)/d(color) (H, W, 3); ``grad_transmittance`` is
    the optional upstream gradient on the final transmittance (H, W), which
    is how the background term feeds back into the foreground opacities.
    Returns a dict with ``alphas (M,)``, ``colors (M,3)``, ``means2d (M,2)``
    and ``cov2d (M,2,2)`` (entrywise gradient, symmetric).
    """
    if cache is None or cache.target is None:
        raise ContractViolation("rasterize_backward needs the cache from rasterize(need_cache=True)")
    splats = cache.splats
    h, w = cache.height, cache.width
    grad_color = np.asarray(grad_color, dtype=np.float64)
    if grad_color.shape != (h, w, 3):
        raise ContractViolation("upstream gradient does not match the cached render size")
    if grad_transmittance is None:
        grad_transmittance = np.zeros((h, w))
    m = len(splats)
    g_alpha = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_mean = np.zeros((m, 2))
    g_conic = np.zeros((m, 2, 2))
    colors = np.asarray(splats.colors, dtype=np.float64)
    alphas = np.asarray(splats.alphas, dtype=np.float64)
    conics = cache.conics
    for y0, y1, x0, x1, idx in cache.tiles:
        if len(idx) == 0:
            continue
        a, raw, dx, dy = _tile_alphas(splats, conics, idx, y0, y1, x0, x1)
        t_excl, t_final = _exclusive_cumprod(1.0 - a)
        wgt = a * t_excl                                 # (K, P)
        gc = grad_color[y0:y1, x0:x1].reshape(-1, 3)     # (P, 3)
        gt = grad_transmittance[y0:y1, x0:x1].ravel()    # (P,)
        c = colors[idx]                                  # (K, 3)
        g_color[idx] += wgt @ gc
        # projected contribution of each splat and the exclusive suffix behind it
        proj = c @ gc.T                                  # (K, P): c_k . g_p
        contrib = wgt * proj
        suffix = np.cumsum(contrib[::-1], axis=0)[::-1] - contrib
        g_a = t_excl * proj - (suffix + gt[None, :] * t_final[None, :]) / (1.0 - a)
        active = (raw >= ALPHA_MIN) & (raw <= ALPHA_MAX)
        g_a = np.where(active, g_a, 0.0)
        gauss = raw / alphas[idx][:, None]
        g_alpha[idx] += np.sum(g_a * gauss, axis=1)
        g_q = -0.5 * a * g_a
        ca, cb, cc = conics[idx, 0, 0][:, None], conics[idx, 0, 1][:, None], conics[idx, 1, 1][:, None]
        g_mean[idx, 0] += np.sum(-2.0 * (ca * dx + cb * dy) * g_q, axis=1)
        g_mean[idx, 1] += np.sum(-2.0 * (cb * dx + cc * dy) * g_q, axis=1)
        g_conic[idx, 0, 0] += np.sum(dx * dx * g_q, axis=1)
        g_conic[idx, 0, 1] += np.sum(dx * dy * g_q, axis=1)
        g_conic[idx, 1, 1] += np.sum(dy * dy * g_q, axis=1)
    g_conic[:, 1, 0] = g_conic[:, 0, 1]
    g_cov = -cache.conics @ g_conic @ cache.conics
    return {"alphas": g_alpha, "colors": g_color, "means2d": g_mean, "cov2d": g_cov}


# -- background --------------------------------------------------------------


@dataclass
class BackgroundCache:
    pixel_index: np.ndarray
    contracted: np.ndarray
    normalized_scale: np.ndarray
    decoder_cache: list
    colors: np.ndarray
    raw: np.ndarray


def background_points(cam, radius, pixel_index=None):
    """Ray/sphere hit points for the pixels at flat ``pixel_index``."""
    dirs = cam.pixel_rays().reshape(-1, 3)
    if pixel_index is not None:
        dirs = dirs[pixel_index]
    origin = np.broadcast_to(cam.center, dirs.shape)
    t = ray_sphere_distance(origin, dirs, radius)
    return origin + t[:, None] * dirs, dirs


def shade_background(cam, field, decoder, aabb, radius, n_frequencies, pixel_index=None):
    """Background colour ``sigmoid(c_n)`` at each pixel's sphere hit.

    No explicit residual exists for background points. Returns
    ``(colors (P, 3), cache)``.
    """
    points, dirs = background_points(cam, radius, pixel_index)
    contracted = contract(normalize_to_aabb(points, aabb))
    f_rad = field.encode(contracted)
    f_dir = positional_encoding(dirs, n_frequencies)
    raw, dcache = decode_color(f_rad, f_dir, decoder)
    colors = sigmoid(raw)
    if pixel_index is None:
        pixel_index = np.arange(len(points))
    return colors, BackgroundCache(pixel_index, contracted, 1.0 / aabb.half_extent, dcache, colors, raw)


def shade_background_backward(cache: BackgroundCache, field, decoder, grad_colors):
    """Accumulate field and decoder gradients for the background colours."""
    if cache is None:
        raise ContractViolation("background backward called without a cache")
    g_raw = grad_colors * _sigmoid_grad(cache.raw, cache.colors)
    _, g_in = decoder.backward(cache.decoder_cache, g_raw)
    field.backward(cache.contracted, g_in[:, :field.output_dim], need_position_grad=False)


def composite_background(target: RenderTarget, cam, field, decoder, aabb,
                         radius=100.0, tau_t=0.2, n_frequencies=4, *, need_cache=False):
    """Add ``T * c_s`` for every pixel whose transmittance exceeds ``tau_t``.

    Pixels with ``T <= tau_t`` keep their foreground colour; their omitted
    background term is bounded by ``T``.
    """
    flat_t = target.transmittance.ravel()
    pixel_index = np.flatnonzero(flat_t > tau_t)
    image = target.color.reshape(-1, 3).copy()
    cache = None
    if len(pixel_index):
        colors, cache = shade_background(cam, field, decoder, aabb, radius, n_frequencies, pixel_index)
        image[pixel_index] += flat_t[pixel_index, None] * colors
    image = image.reshape(target.color.shape)
    if need_cache:
        return image, cache
    return image


def composite_background_backward(target: RenderTarget, cache, field, decoder, grad_image):
    """Returns the upstream gradient on the transmittance map (H, W)."""
    flat_g = grad_image.reshape(-1, 3)
    grad_t = np.zeros(target.transmittance.size)
    if cache is not None and len(cache.pixel_index):
        idx = cache.pixel_index
        grad_t[idx] = np.sum(flat_g[idx] * cache.colors, axis=1)
        t = target.transmittance.ravel()[idx]
        shade_background_backward(cache, field, decoder, flat_g[idx] * t[:, None])
    return grad_t.reshape(target.transmittance.shape)
