"""Tiny fully-connected decoders with hand-written reverse mode."""

import numpy as np

from .errors import ContractViolation, InvalidInputError

# Geometry decoder output layout.
GEO_OPACITY = slice(0, 1)
GEO_SCALE = slice(1, 4)
GEO_ROTATION = slice(4, 8)
GEO_OUTPUT_DIM = 8
COLOR_OUTPUT_DIM = 3


class DecoderNet:
    """ReLU MLP ``in -> hidden... -> out`` with a raw (linear) output layer.

    ``weights[i]`` has shape ``(dims[i+1], dims[i])`` so a layer computes
    ``x @ W.T + b``.
    """

    def __init__(self, dims, weights=None, biases=None, *, rng=None, dtype=np.float32):
        self.dims = [int(d) for d in dims]
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise InvalidInputError(f"bad layer dims {self.dims}")
        if weights is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weights, biases = [], []
            for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
                bound = np.sqrt(1.0 / fan_in)
                weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
                biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
        self.weights = [np.asarray(w) for w in weights]
        self.biases = [np.asarray(b) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i + 1], self.dims[i]) or b.shape != (self.dims[i + 1],):
                raise InvalidInputError(f"layer {i} parameter shapes do not chain with dims {self.dims}")
        self.zero_grad()

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    def parameters(self):
        return [*self.weights, *self.biases]

    def gradients(self):
        return [*self.grad_weights, *self.grad_biases]

    def zero_grad(self):
        if getattr(self, "grad_weights", None) is None:
            self.grad_weights = [np.zeros_like(w) for w in self.weights]
            self.grad_biases = [np.zeros_like(b) for b in self.biases]
        for g in self.grad_weights + self.grad_biases:
            g.fill(0)

    def forward(self, x):
        """Returns ``(output, cache)``; ``cache`` is required by :meth:`backward`."""
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InvalidInputError(f"decoder expects input (N, {self.in_dim}), got {x.shape}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, *, accumulate=True):
        """Reverse pass. Returns ``(param_grads, grad_input)``.

        ``param_grads`` is ``(grad_weights, grad_biases)``; with
        ``accumulate`` they are also added to the net's gradient buffers.
        """
        if not cache:
            raise ContractViolation("decoder backward called without a forward cache")
        grad = np.asarray(grad_out)
        if grad.shape != cache[-1].shape:
            raise InvalidInputError("upstream gradient does not match the cached output")
        gws, gbs = [None] * len(self.weights), [None] * len(self.weights)
        for i in reversed(range(len(self.weights))):
            if i < len(self.weights) - 1:
                grad = grad * (cache[i + 1] > 0)
            gws[i] = grad.T @ cache[i]
            gbs[i] = grad.sum(axis=0)
            grad = grad @ self.weights[i]
        if accumulate:
            for i in range(len(self.weights)):
                self.grad_weights[i] += gws[i]
                self.grad_biases[i] += gbs[i]
        return (gws, gbs), grad


def geometry_decoder(in_dim, hidden=64, n_hidden=2, *, rng=None, dtype=np.float32):
    """Decoder emitting raw (opacity, scale[3], rotation[4]).

    The rotation bias starts at the identity quaternion so fresh models begin
    with axis-aligned Gaussians.
    """
    net = DecoderNet([in_dim] + [hidden] * n_hidden + [GEO_OUTPUT_DIM], rng=rng, dtype=dtype)
    net.biases[-1][GEO_ROTATION] = np.array([1.0, 0.0, 0.0, 0.0], dtype=net.biases[-1].dtype)
    return net


def color_decoder(in_dim, hidden=64, n_hidden=2, *, rng=None, dtype=np.float32):
    return DecoderNet([in_dim] + [hidden] * n_hidden + [COLOR_OUTPUT_DIM], rng=rng, dtype=dtype)


def decode_geometry(f_geo, net: DecoderNet):
    """Raw geometry ``(opacity (N,), scale (N,3), rotation (N,4))`` plus cache."""
    if net.out_dim != GEO_OUTPUT_DIM:
        raise InvalidInputError("geometry decoder must emit 8 values")
    out, cache = net.forward(np.atleast_2d(f_geo))
    return (out[:, 0], out[:, GEO_SCALE], out[:, GEO_ROTATION]), cache


def decode_color(f_rad, f_dir, net: DecoderNet):
    """Raw view-dependent color (N, 3) plus cache."""
    f_rad, f_dir = np.atleast_2d(f_rad), np.atleast_2d(f_dir)
    if f_rad.shape[1] + f_dir.shape[1] != net.in_dim:
        raise InvalidInputError(
            f"color decoder expects {net.in_dim} inputs, got {f_rad.shape[1]} + {f_dir.shape[1]}"
        )
    return net.forward(np.concatenate([f_rad, f_dir], axis=1))
