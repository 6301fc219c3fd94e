"""Grouping of explicit Gaussian attributes into R-VQ vectors.

Colors form 3-D vectors; scale and opacity residuals are paired into 2-D
vectors. A model decoded from a bundle remembers the codebooks that
reproduce its attributes (``model.rvq_source``) so re-compressing it
reuses them instead of refitting, which keeps compression idempotent.
"""

import numpy as np

from ..binio import Reader, Writer
from ..errors import CorruptStreamError
from .rvq import RvqCodebook, rvq_decode

GROUPS = ("color", "scale_opacity")


def group_vectors(gaussians, name):
    if name == "color":
        return np.asarray(gaussians.colors, dtype=np.float64)
    if name == "scale_opacity":
        return np.stack([gaussians.scales, gaussians.opacities], axis=1).astype(np.float64)
    raise KeyError(name)


def set_group_vectors(gaussians, name, values):
    dtype = gaussians.positions.dtype
    if name == "color":
        gaussians.colors = values.astype(dtype)
    elif name == "scale_opacity":
        gaussians.scales = values[:, 0].astype(dtype)
        gaussians.opacities = values[:, 1].astype(dtype)
    else:
        raise KeyError(name)


def reusable_source(model):
    """``model.rvq_source`` if it still reproduces every group bit for bit, else None."""
    src = getattr(model, "rvq_source", None)
    if not src or set(src) != set(GROUPS):
        return None
    g = model.gaussians
    for name in GROUPS:
        codebook, indices = src[name]
        if len(indices) != len(g):
            return None
        current = group_vectors(g, name)
        decoded = rvq_decode(codebook, indices).astype(g.positions.dtype).astype(np.float64)
        if not np.array_equal(current, decoded):
            return None
    return src


def write_codebook(w: Writer, codebook: RvqCodebook):
    w.pack("3I", *codebook.codewords.shape)
    w.array(codebook.codewords, np.float64)


def read_codebook(r: Reader) -> RvqCodebook:
    at = r.offset
    stages, k, d = r.unpack("3I")
    if stages == 0 or k == 0 or d == 0 or stages * k * d > 1 << 26:
        raise CorruptStreamError(f"implausible codebook shape {(stages, k, d)}", at)
    cw = r.array(np.float64, stages * k * d, (stages, k, d))
    if not np.all(np.isfinite(cw)):
        raise CorruptStreamError("codebook holds non-finite values", at)
    return RvqCodebook(cw)


def write_source(w: Writer, src):
    """Raw (uncompressed) codebooks and indices, used by checkpoints."""
    for name in GROUPS:
        codebook, indices = src[name]
        write_codebook(w, codebook)
        w.pack("I", len(indices))
        w.array(indices, np.uint16)


def read_source(r: Reader):
    src = {}
    for name in GROUPS:
        codebook = read_codebook(r)
        n = r.unpack("I")
        at = r.offset
        indices = r.array(np.uint16, n * codebook.n_stages, (n, codebook.n_stages)).astype(np.int64)
        if indices.size and indices.max() >= codebook.k:
            raise CorruptStreamError("codeword index out of range", at)
        src[name] = (codebook, indices)
    return src
