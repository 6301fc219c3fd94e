"""Pinhole camera with world-to-camera extrinsics (x right, y down, z forward)."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Camera:
    """A pinhole camera.

    ``rotation`` and ``translation`` map world points into camera space,
    ``x_cam = rotation @ x_world + translation``. Pixel centres sit at
    half-integer coordinates, so pixel ``(row, col)`` is sampled at
    ``(col + 0.5, row + 0.5)``.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.2

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise InvalidInputError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.near <= 0:
            raise InvalidInputError("near plane must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image size must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def pixel_rays(self):
        """Unit world-space ray directions for every pixel, shape (H, W, 3)."""
        cols = np.arange(self.width) + 0.5
        rows = np.arange(self.height) + 0.5
        u, v = np.meshgrid(cols, rows)
        dirs = np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1
        )
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs @ self.rotation

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
            "near": float(self.near),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            near=float(d.get("near", 0.2)),
        )


def look_at(eye, target, up=(0.0, 1.0, 0.0), *, fov_x, width, height, near=0.2):
    """Build a camera at ``eye`` looking toward ``target``.

    ``up`` is the world direction that should appear toward the top of the
    image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise InvalidInputError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    focal = 0.5 * width / np.tan(0.5 * fov_x)
    return Camera(
        rotation=rot,
        translation=-rot @ eye,
        fx=focal,
        fy=focal,
        cx=0.5 * width,
        cy=0.5 * height,
        width=width,
        height=height,
        near=near,
    )
