"""Pure geometry shared by the field, renderer and background code.

Every function accepts leading batch dimensions; a single 3-vector is just
the batch-free case. Backward helpers take the upstream gradient and return
gradients with respect to the forward inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError

# Added to every projected 2D covariance (pixels squared).
LOW_PASS = 0.3


@dataclass(frozen=True)
class Aabb:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidInputError("AABB corners must be finite")
        if np.any(hi <= lo):
            raise InvalidInputError(
                f"degenerate AABB: min {lo.tolist()} is not below max {hi.tolist()} on every axis"
            )
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def center(self):
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def half_extent(self):
        return 0.5 * (self.max_corner - self.min_corner)

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    @classmethod
    def from_points(cls, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(points.min(axis=0), points.max(axis=0))

    @classmethod
    def from_percentiles(cls, points, lo=1.0, hi=99.0):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(np.percentile(points, lo, axis=0), np.percentile(points, hi, axis=0))

    @classmethod
    def cube(cls, half_size=1.3):
        return cls(np.full(3, -half_size), np.full(3, half_size))


def normalize_to_aabb(p, box: Aabb):
    """Map ``p`` so the box centre goes to the origin and its faces to +-1."""
    half = box.half_extent
    if np.any(half <= 0):
        raise InvalidInputError("degenerate AABB")
    return (np.asarray(p) - box.center) / half


def contract(p):
    """Squash normalized coordinates into the open unit cube.

    Points with norm <= 1 are scaled by 1/4; points beyond are pulled in so
    that infinity lands on the sphere of radius 1/2. Both branches are then
    shifted by 0.5 so the result lies in (0, 1)^3.
    """
    p = np.asarray(p, dtype=np.float64)
    norm = np.linalg.norm(p, axis=-1, keepdims=True)
    safe = np.maximum(norm, 1.0)
    outer = 0.25 * (2.0 - 1.0 / safe) * (p / safe)
    return np.where(norm <= 1.0, 0.25 * p, outer) + 0.5


def contract_backward(p, grad):
    """Vector-Jacobian product of :func:`contract` (its Jacobian is symmetric)."""
    p = np.asarray(p, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    norm = np.linalg.norm(p, axis=-1, keepdims=True)
    safe = np.maximum(norm, 1.0)
    u = p / safe
    u_dot_g = np.sum(u * grad, axis=-1, keepdims=True)
    # J = 0.25 * [2 (I - u u^T) / n - (I - 2 u u^T) / n^2]
    outer = 0.25 * (2.0 * (grad - u * u_dot_g) / safe - (grad - 2.0 * u * u_dot_g) / safe**2)
    return np.where(norm <= 1.0, 0.25 * grad, outer)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidInputError("ray direction must have unit norm")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "direction", d)


def ray_sphere_distance(origins, directions, radius):
    """Forward distance to an origin-centred sphere for a batch of rays.

    Solves ``A t^2 + B t + C = 0`` and returns the larger root. The
    numerically stable root form is used when ``B > 0`` to avoid
    cancellation. Raises :class:`ConfigurationError` if any ray has no
    forward hit, which only happens when its origin lies outside the sphere.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius * radius
    disc = b * b - 4.0 * a * c
    if np.any(disc < 0):
        raise ConfigurationError("ray misses the background sphere; increase the sphere radius")
    root = np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(b > 0, 2.0 * c / (-b - root), (-b + root) / (2.0 * a))
    if np.any(~(t > 0)):
        raise ConfigurationError(
            "camera lies outside the background sphere; increase the sphere radius"
        )
    return t


def ray_sphere_intersect(ray: Ray, radius: float):
    """Return ``(t, point)`` where ``ray`` leaves the sphere of ``radius``."""
    t = float(ray_sphere_distance(ray.origin, ray.direction, radius))
    return t, ray.origin + t * ray.direction


def quat_to_rotation(q):
    """Rotation matrices from (w, x, y, z) quaternions, normalizing first."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise InvalidInputError("zero quaternion has no rotation")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    rot = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return rot.reshape(q.shape[:-1] + (3, 3))


def quat_to_rotation_backward(q, grad_rot):
    """Gradient of the polynomial rotation formula at unit quaternion ``q``.

    Normalization is left to the caller, which already owns the projection
    onto the unit sphere.
    """
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    g = np.asarray(grad_rot, dtype=np.float64)
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    return np.stack([dw, dx, dy, dz], axis=-1)


def covariance_3d(scale, q):
    """Sigma = R S S^T R^T for per-axis standard deviations ``scale``."""
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(~(scale > 0)):
        raise InvalidInputError("scales must be strictly positive")
    m = quat_to_rotation(q) * scale[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def covariance_3d_backward(scale, q, grad_cov):
    """Returns ``(grad_scale, grad_q)`` for an entrywise covariance gradient."""
    rot = quat_to_rotation(q)
    m = rot * scale[..., None, :]
    grad_m = (grad_cov + np.swapaxes(grad_cov, -1, -2)) @ m
    grad_scale = np.sum(grad_m * rot, axis=-2)
    grad_rot = grad_m * scale[..., None, :]
    return grad_scale, quat_to_rotation_backward(q, grad_rot)


def _projection_jacobian(t, cam):
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    jac = np.zeros(t.shape[:-1] + (2, 3))
    jac[..., 0, 0] = cam.fx / tz
    jac[..., 0, 2] = -cam.fx * tx / tz**2
    jac[..., 1, 1] = cam.fy / tz
    jac[..., 1, 2] = -cam.fy * ty / tz**2
    return jac


def project_gaussians(means, cov3d, cam):
    """EWA projection of a batch of Gaussians.

    Returns ``(mean2d, cov2d, depth, valid)``. Rows with depth at or below
    the near plane are flagged invalid; their other outputs are garbage and
    must be ignored.
    """
    means = np.asarray(means, dtype=np.float64)
    t = cam.world_to_camera(means)
    depth = t[..., 2]
    valid = depth > cam.near
    tz = np.where(valid, depth, 1.0)
    t = np.concatenate([t[..., :2], tz[..., None]], axis=-1)
    mean2d = np.stack([cam.fx * t[..., 0] / tz + cam.cx, cam.fy * t[..., 1] / tz + cam.cy], axis=-1)
    jw = _projection_jacobian(t, cam) @ cam.rotation
    cov2d = jw @ cov3d @ np.swapaxes(jw, -1, -2) + LOW_PASS * np.eye(2)
    return mean2d, cov2d, depth, valid


def project_gaussians_backward(means, cov3d, cam, grad_mean2d, grad_cov2d):
    """Returns ``(grad_means, grad_cov3d)``; assumes every row is valid."""
    t = cam.world_to_camera(np.asarray(means, dtype=np.float64))
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    w = cam.rotation
    jac = _projection_jacobian(t, cam)
    jw = jac @ w
    grad_cov3d = np.swapaxes(jw, -1, -2) @ grad_cov2d @ jw

    m = w @ cov3d @ w.T
    grad_jac = (grad_cov2d + np.swapaxes(grad_cov2d, -1, -2)) @ jac @ m
    gx, gy = grad_mean2d[..., 0], grad_mean2d[..., 1]
    grad_t = np.stack(
        [
            gx * cam.fx / tz - grad_jac[..., 0, 2] * cam.fx / tz**2,
            gy * cam.fy / tz - grad_jac[..., 1, 2] * cam.fy / tz**2,
            -gx * cam.fx * tx / tz**2
            - gy * cam.fy * ty / tz**2
            - grad_jac[..., 0, 0] * cam.fx / tz**2
            + grad_jac[..., 0, 2] * 2 * cam.fx * tx / tz**3
            - grad_jac[..., 1, 1] * cam.fy / tz**2
            + grad_jac[..., 1, 2] * 2 * cam.fy * ty / tz**3,
        ],
        axis=-1,
    )
    return grad_t @ w, grad_cov3d


def project_gaussian(mean, cov3d, cam):
    """Single-Gaussian projection; returns ``None`` when behind the near plane."""
    mean2d, cov2d, depth, valid = project_gaussians(
        np.asarray(mean, dtype=np.float64)[None], np.asarray(cov3d, dtype=np.float64)[None], cam
    )
    if not valid[0]:
        return None
    return mean2d[0], cov2d[0], float(depth[0])
