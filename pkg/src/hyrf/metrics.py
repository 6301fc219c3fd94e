"""Image metrics and the training loss, with gradients.

SSIM uses an 11-tap Gaussian window (sigma 1.5) applied separably with
symmetric (mirror) boundary handling, so constant images stay constant
under the filter. The filter is materialized as a small dense matrix per
axis, which makes its adjoint trivial and handles images smaller than the
window.
"""

from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

C1 = 0.01**2
C2 = 0.03**2
WINDOW = 11
SIGMA = 1.5


def _reflect(i, n):
    period = 2 * n
    i = i % period
    return np.where(i < n, i, period - 1 - i)


@lru_cache(maxsize=32)
def filter_matrix(n, window=WINDOW, sigma=SIGMA):
    """(n, n) matrix applying the normalized 1D Gaussian with mirrored borders."""
    half = window // 2
    taps = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    taps /= taps.sum()
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for k, w in zip(range(-half, half + 1), taps):
        np.add.at(mat, (rows, _reflect(rows + k, n)), w)
    mat.setflags(write=False)
    return mat


def _blur(img, fh, fw):
    # img: (H, W, C)
    return np.einsum("ij,jkc,lk->ilc", fh, img, fw, optimize=True)


def _blur_adjoint(img, fh, fw):
    return np.einsum("ji,jkc,kl->ilc", fh, img, fw, optimize=True)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise InvalidInputError("images must be (H, W) or (H, W, C)")
    return a, b


def _ssim_terms(x, y):
    fh, fw = filter_matrix(x.shape[0]), filter_matrix(x.shape[1])
    mx, my = _blur(x, fh, fw), _blur(y, fh, fw)
    exx, eyy, exy = _blur(x * x, fh, fw), _blur(y * y, fh, fw), _blur(x * y, fh, fw)
    a1 = 2 * mx * my + C1
    a2 = 2 * (exy - mx * my) + C2
    b1 = mx * mx + my * my + C1
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    return (fh, fw, mx, my, a1, a2, b1, b2), a1 * a2 / (b1 * b2)


def ssim_map(a, b):
    a, b = _check_pair(a, b)
    return _ssim_terms(a, b)[1]


def ssim(a, b):
    """Mean structural similarity over pixels and channels."""
    return float(np.mean(ssim_map(a, b)))


def ssim_grad(x, y):
    """``(ssim, d ssim / d x)``."""
    x, y = _check_pair(x, y)
    (fh, fw, mx, my, a1, a2, b1, b2), s = _ssim_terms(x, y)
    g = 1.0 / s.size
    d_mx = 2 * my * (a2 - a1) / (b1 * b2) - 2 * mx * s * (1 / b1 - 1 / b2)
    d_exx = -s / b2
    d_exy = 2 * a1 / (b1 * b2)
    grad = (
        _blur_adjoint(g * d_mx, fh, fw)
        + 2 * x * _blur_adjoint(g * d_exx, fh, fw)
        + y * _blur_adjoint(g * d_exy, fh, fw)
    )
    return float(np.mean(s)), grad


def psnr(pred, gt):
    """Peak signal-to-noise ratio in dB for peak 1.0; ``inf`` when identical."""
    pred, gt = _check_pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def loss(pred, gt, lam=0.2):
    """``(total, l1, ssim)`` with total = (1 - lam) * L1 + lam * (1 - SSIM)."""
    pred2, gt2 = _check_pair(pred, gt)
    l1 = float(np.mean(np.abs(pred2 - gt2)))
    s = ssim(pred2, gt2)
    return (1 - lam) * l1 + lam * (1 - s), l1, s


def loss_and_grad(pred, gt, lam=0.2):
    """``((total, l1, ssim), d total / d pred)``."""
    shape = np.shape(pred)
    pred2, gt2 = _check_pair(pred, gt)
    diff = pred2 - gt2
    l1 = float(np.mean(np.abs(diff)))
    grad = (1 - lam) * np.sign(diff) / diff.size
    s, g_s = ssim_grad(pred2, gt2)
    grad = grad - lam * g_s
    total = (1 - lam) * l1 + lam * (1 - s)
    return (total, l1, s), grad.reshape(shape)
