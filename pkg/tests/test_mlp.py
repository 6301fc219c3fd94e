import numpy as np
import pytest

from hyrf.errors import ContractViolation, InvalidInputError
from hyrf.mlp import DecoderNet, color_decoder, decode_color, decode_geometry, geometry_decoder

from conftest import central_diff, rel_err


def dense_reference(net, x):
    """Plain per-sample loops over neurons."""
    out = []
    for row in np.asarray(x, dtype=np.float64):
        h = row
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            nxt = np.array([sum(w[j, k] * h[k] for k in range(len(h))) + b[j] for j in range(len(b))])
            h = np.maximum(nxt, 0) if i < len(net.weights) - 1 else nxt
        out.append(h)
    return np.array(out)


def zero_net(dims):
    net = DecoderNet(dims, dtype=np.float64)
    for arr in net.parameters():
        arr.fill(0)
    return net


class TestForward:
    def test_zero_geometry_net(self, rng):
        (op, sc, rot), _ = decode_geometry(rng.normal(size=(4, 6)), zero_net([6, 64, 64, 8]))
        assert np.all(op == 0) and np.all(sc == 0) and np.all(rot == 0)

    def test_identity_path(self):
        net = zero_net([3, 4, 4, 8])
        net.weights[0][0, 1] = 1
        net.weights[1][2, 0] = 1
        net.weights[2][5, 2] = 1
        out = net(np.array([[0.3, 0.7, 0.1]]))
        expected = np.zeros(8)
        expected[5] = 0.7
        np.testing.assert_array_equal(out[0], expected)

    def test_matches_dense_reference_float64(self, rng):
        net = geometry_decoder(10, rng=rng, dtype=np.float64)
        x = rng.normal(size=(5, 10))
        np.testing.assert_allclose(net(x), dense_reference(net, x), rtol=1e-12, atol=1e-12)

    def test_matches_dense_reference_float32(self, rng):
        net = geometry_decoder(10, rng=rng)
        x = rng.normal(size=(5, 10)).astype(np.float32)
        np.testing.assert_allclose(net(x), dense_reference(net, x), atol=1e-6)

    def test_color_zero_weights(self, rng):
        net = zero_net([32 + 27, 64, 64, 3])
        out, _ = decode_color(rng.normal(size=(3, 32)), rng.normal(size=(3, 27)), net)
        np.testing.assert_array_equal(out, 0)

    def test_color_independent_of_direction_when_weights_zero(self, rng):
        net = color_decoder(8 + 27, rng=rng, dtype=np.float64)
        net.weights[0][:, 8:] = 0
        f_rad = rng.normal(size=(1, 8))
        outs = [decode_color(f_rad, rng.uniform(-1, 1, (1, 27)), net)[0] for _ in range(10)]
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_color_matches_reference(self, rng):
        net = color_decoder(8 + 27, rng=rng, dtype=np.float64)
        f_rad, f_dir = rng.normal(size=(4, 8)), rng.uniform(-1, 1, (4, 27))
        out, _ = decode_color(f_rad, f_dir, net)
        np.testing.assert_allclose(out, dense_reference(net, np.hstack([f_rad, f_dir])), atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            decode_geometry(rng.normal(size=(2, 5)), geometry_decoder(6))
        with pytest.raises(InvalidInputError):
            decode_color(rng.normal(size=(2, 5)), rng.normal(size=(2, 27)), color_decoder(33))

    def test_dead_zone_gives_output_bias(self, rng):
        net = geometry_decoder(4, rng=rng, dtype=np.float64)
        net.weights[0][:] = np.abs(net.weights[0])
        net.biases[0][:] = -1.0
        net.biases[1][:] = -1.0     # second hidden layer sees zeros, stays dead
        x = -np.abs(rng.normal(size=(3, 4)))
        out = net(x)
        np.testing.assert_array_equal(out, np.broadcast_to(net.biases[-1], out.shape))

    def test_rotation_bias_is_identity(self):
        net = geometry_decoder(4)
        np.testing.assert_array_equal(net.biases[-1][4:], [1, 0, 0, 0])

    def test_init_bounds(self, rng):
        net = DecoderNet([16, 64, 3], rng=rng)
        assert np.max(np.abs(net.weights[0])) <= 0.25
        assert np.max(np.abs(net.weights[1])) <= 0.125


class TestBackward:
    def test_zero_upstream(self, rng):
        net = geometry_decoder(6, rng=rng, dtype=np.float64)
        out, cache = net.forward(rng.normal(size=(3, 6)))
        (gw, gb), gx = net.backward(cache, np.zeros_like(out))
        assert all(np.all(g == 0) for g in gw + gb) and np.all(gx == 0)

    def test_single_neuron(self):
        net = DecoderNet([3, 1], [np.array([[0.5, -2.0, 1.5]])], [np.array([0.1])])
        x = np.array([[1.0, 2.0, 3.0]])
        _, cache = net.forward(x)
        (gw, gb), gx = net.backward(cache, np.ones((1, 1)))
        np.testing.assert_array_equal(gw[0], x)
        np.testing.assert_array_equal(gb[0], [1.0])
        np.testing.assert_array_equal(gx, net.weights[0])

    def test_missing_cache(self):
        with pytest.raises(ContractViolation):
            geometry_decoder(4).backward(None, np.zeros((1, 8)))

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = DecoderNet([5, 16, 16, 4], rng=rng, dtype=np.float64)
        # redraw until no hidden pre-activation sits near a rectifier kink
        while True:
            x = rng.normal(size=(3, 5))
            _, cache = net.forward(x)
            pre = [cache[i] @ w.T + b for i, (w, b) in enumerate(zip(net.weights[:-1], net.biases[:-1]))]
            if min(np.min(np.abs(p)) for p in pre) > 1e-2:
                break
        up = rng.normal(size=(3, 4))
        f = lambda: float(np.sum(net(x) * up))
        _, cache = net.forward(x)
        (gw, gb), gx = net.backward(cache, up)
        worst = 0.0
        for arr, grad in list(zip(net.weights + net.biases, gw + gb)) + [(x, gx)]:
            for idx in np.ndindex(arr.shape):
                worst = max(worst, rel_err(grad[idx], central_diff(f, arr, idx, h=1e-4)))
        assert worst < 1e-4

    def test_accumulates_into_buffers(self, rng):
        net = geometry_decoder(6, rng=rng, dtype=np.float64)
        x = rng.normal(size=(2, 6))
        up = rng.normal(size=(2, 8))
        _, cache = net.forward(x)
        net.backward(cache, up)
        net.backward(cache, up)
        (gw, _), _ = net.backward(cache, up, accumulate=False)
        np.testing.assert_allclose(net.grad_weights[0], 2 * gw[0])
