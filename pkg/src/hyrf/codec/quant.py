"""8-bit min-max quantization."""

import numpy as np

from ..errors import InvalidInputError

LEVELS = 255


def minmax_quantize_8bit(values):
    """Returns ``(codes uint8, min, max)``.

    Rounds half away from zero. A flat array maps to all-zero codes.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidInputError("cannot quantize an empty array")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("values must be finite")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint8), lo, hi
    t = (v - lo) / (hi - lo) * LEVELS
    codes = np.floor(t + 0.5)       # t >= 0, so this is half-away-from-zero
    return np.clip(codes, 0, LEVELS).astype(np.uint8), lo, hi


def dequantize_8bit(codes, lo, hi):
    """Inverse map; code 0 and 255 land exactly on ``lo`` and ``hi``."""
    c = np.asarray(codes).astype(np.float64)
    if hi == lo:
        return np.full(c.shape, lo)
    out = lo + c * ((hi - lo) / LEVELS)
    out[c == LEVELS] = hi
    return out
