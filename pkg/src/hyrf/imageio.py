"""Image files: 8-bit PNG/JPEG through Pillow and raw ``.npy`` arrays.

8-bit values map to [0, 1] by division by 255 and back by clamp + round,
so a PNG survives a read/write cycle unchanged.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, InvalidInputError


def read_image(path, background=(0.0, 0.0, 0.0)):
    """``(H, W, 3)`` float64 in [0, 1]; RGBA is composited over ``background``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: image file not found")
    if path.suffix == ".npy":
        img = np.load(path).astype(np.float64)
    else:
        try:
            with Image.open(path) as im:
                if im.mode not in ("RGB", "RGBA"):
                    im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
                img = np.asarray(im, dtype=np.float64) / 255.0
        except OSError as exc:
            raise DataError(f"{path}: cannot decode image ({exc})") from None
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise DataError(f"{path}: expected an RGB or RGBA image, got shape {img.shape}")
    if img.shape[2] == 4:
        alpha = img[..., 3:]
        img = img[..., :3] * alpha + np.asarray(background, dtype=np.float64) * (1 - alpha)
    return img


def to_uint8(img):
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_png(path, img):
    """Write an ``(H, W, 3)`` or ``(H, W)`` image in [0, 1] as 8-bit PNG."""
    path = Path(path)
    if not path.parent.is_dir():
        raise InvalidInputError(f"output directory {path.parent} does not exist")
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim not in (2, 3):
        raise InvalidInputError(f"cannot write an image of shape {arr.shape}")
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")
    return path
