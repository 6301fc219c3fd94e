"""Residual vector quantization with k-means++ seeded Lloyd stages.

Stage ``t`` clusters the residual ``v - recon_{t-1}`` where ``recon`` is the
running sum of chosen codewords, accumulated in stage order. The decoder
sums codewords in the same order, so its output matches the encoder's
bookkeeping bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import CorruptStreamError, InvalidInputError


@dataclass(frozen=True)
class RvqCodebook:
    codewords: np.ndarray                 # (n_stages, K, D) float64
    stage_errors: tuple = field(default=(), compare=False)  # encoder log, not serialized

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.float64)
        if cw.ndim != 3 or 0 in cw.shape:
            raise InvalidInputError("codewords must be a non-empty (stages, K, D) array")
        if not np.all(np.isfinite(cw)):
            raise InvalidInputError("codewords must be finite")
        object.__setattr__(self, "codewords", cw)

    @property
    def n_stages(self):
        return self.codewords.shape[0]

    @property
    def k(self):
        return self.codewords.shape[1]

    @property
    def dim(self):
        return self.codewords.shape[2]


def _sq_dist(x, c):
    # (N, K) squared distances without the cancellation of the expanded form
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def nearest(x, c):
    """Index of the nearest codeword (lowest index on ties) and its squared distance."""
    d = _sq_dist(x, c)
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(len(x)), idx]


def kmeans_pp_init(x, k, rng):
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            i = rng.choice(n, p=d2 / total)
        else:
            i = rng.integers(n)
        centers[j] = x[i]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def lloyd(x, k, iters=20, rng=None, tol=0.0):
    """k-means on ``x``. Returns ``(centers, assignment, errors)``.

    ``errors`` logs the total squared error after every assignment step;
    it never increases. An empty cluster is re-seeded with the point
    farthest from its current center.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    centers = kmeans_pp_init(x, k, rng)
    idx, d = nearest(x, centers)
    errors = [float(d.sum())]
    for _ in range(iters):
        counts = np.bincount(idx, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, idx, x)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(d))
            centers[j] = x[far]
            idx[far] = j
            d[far] = 0.0
        idx, d = nearest(x, centers)
        errors.append(float(d.sum()))
        if errors[-2] - errors[-1] <= tol * max(errors[-2], 1e-300):
            break
    return centers, idx, errors


def rvq_fit_encode(vectors, n_stages=6, k=64, iters=20, seed=0):
    """Fit a residual codebook and encode ``vectors``.

    Returns ``(codebook, indices)`` with ``indices`` of shape ``(N, n_stages)``.
    ``codebook.stage_errors[t]`` is the total squared residual after stage t.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("R-VQ input must be a non-empty (N, D) array")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("R-VQ input must be finite")
    n = len(x)
    if k > n:
        raise InvalidInputError(f"codebook size K={k} exceeds the number of vectors N={n}")
    if n_stages < 1 or k < 1:
        raise InvalidInputError("R-VQ needs at least one stage and one codeword")
    rng = np.random.default_rng(seed)
    recon = np.zeros_like(x)
    codewords = np.empty((n_stages, k, x.shape[1]))
    indices = np.empty((n, n_stages), dtype=np.int64)
    errors = []
    prev = float((x ** 2).sum())
    for t in range(n_stages):
        centers, idx, _ = lloyd(x - recon, k, iters, rng)
        trial = recon + centers[idx]
        err = float(((x - trial) ** 2).sum())
        if err > prev:
            # only rounding can make a stage worse (e.g. a ~1e-17 mean);
            # a zero codebook keeps the reconstruction bit for bit instead
            centers = np.zeros_like(centers)
            idx = np.zeros(n, dtype=np.int64)
            trial = recon + centers[idx]
            err = float(((x - trial) ** 2).sum())
        codewords[t] = centers
        indices[:, t] = idx
        recon = trial
        errors.append(err)
        prev = err
    return RvqCodebook(codewords, tuple(errors)), indices


def rvq_decode(codebook: RvqCodebook, indices):
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != codebook.n_stages:
        raise CorruptStreamError(
            f"index array of shape {indices.shape} does not fit {codebook.n_stages} stages", 0
        )
    if indices.size and (indices.min() < 0 or indices.max() >= codebook.k):
        raise CorruptStreamError(f"codeword index out of range [0, {codebook.k})", 0)
    recon = np.zeros((len(indices), codebook.dim))
    for t in range(codebook.n_stages):
        recon = recon + codebook.codewords[t][indices[:, t]]
    return recon
