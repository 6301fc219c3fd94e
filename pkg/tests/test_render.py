import numpy as np
import pytest

from hyrf.camera import Camera, look_at
from hyrf.errors import ContractViolation
from hyrf.gaussians import logit
from hyrf.geometry import Aabb, covariance_3d, project_gaussians
from hyrf.model import HybridModel
from hyrf.render import (
    ALPHA_MAX,
    ALPHA_MIN,
    RenderTarget,
    Splats,
    composite_background,
    precull,
    rasterize,
    rasterize_backward,
)

from conftest import MICRO_CONFIG, central_diff, culling_scene, micro_scene, random_splats, rel_err


def brute_force_blend(splats, width, height):
    """Per-pixel loop: sort by depth, alpha with cutoff and cap, accumulate."""
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    order = sorted(range(len(splats)), key=lambda i: (splats.depths[i], i))
    for row in range(height):
        for col in range(width):
            px = np.array([col + 0.5, row + 0.5])
            t = 1.0
            c = np.zeros(3)
            for i in order:
                inv = np.linalg.inv(splats.cov2d[i])
                d = px - splats.means2d[i]
                raw = splats.alphas[i] * np.exp(-0.5 * d @ inv @ d)
                if raw < ALPHA_MIN:
                    continue
                a = min(raw, ALPHA_MAX)
                c += splats.colors[i] * a * t
                t *= 1 - a
            color[row, col] = c
            trans[row, col] = t
    return color, trans


def one_splat(mean, alpha, color, depth=1.0, var=1.0):
    return Splats(np.array([mean], float), np.array([np.eye(2) * var]), np.array([depth]),
                  np.array([alpha]), np.array([color], float))


def concat(*ss):
    return Splats(*(np.concatenate([getattr(s, k) for s in ss]) for k in
                    ("means2d", "cov2d", "depths", "alphas", "colors")))


def axis_camera(f=100.0, size=64, near=0.2):
    return Camera(np.eye(3), np.zeros(3), f, f, size / 2, size / 2, size, size, near)


class TestPrecull:
    def test_on_axis_kept(self):
        cam = axis_camera(near=0.5)
        assert precull(np.array([[0, 0, 1.0]]), cam).keep_mask[0]

    def test_behind_culled(self):
        assert not precull(np.array([[0, 0, -1.0]]), axis_camera()).keep_mask[0]

    def test_near_plane_culled(self):
        assert not precull(np.array([[0, 0, 0.1]]), axis_camera(near=0.2)).keep_mask[0]

    def test_tolerance_band(self):
        # x_ndc = 2 (f X/Z + cx) / W - 1 = 1.10  ->  X/Z = (0.5 * 2.1 * 64 - 32) / 100
        cam = axis_camera()
        ratio = (0.5 * 2.1 * 64 - 32) / 100
        p = np.array([[ratio * 3.0, 0.0, 3.0]])
        x_ndc = 2 * (cam.fx * p[0, 0] / p[0, 2] + cam.cx) / cam.width - 1
        assert x_ndc == pytest.approx(1.10)
        assert precull(p, cam, tol=0.15).keep_mask[0]
        assert not precull(p, cam, tol=0.05).keep_mask[0]

    def test_result_consistent(self, rng):
        res = precull(rng.normal(size=(100, 3)) * 3, look_at([0, 0, -4], [0, 0, 0], fov_x=0.8, width=16, height=16))
        assert res.keep_mask.sum() == len(res.kept_indices)
        np.testing.assert_array_equal(np.flatnonzero(res.keep_mask), res.kept_indices)


class TestRasterize:
    def test_empty(self):
        empty = Splats(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros(0), np.zeros((0, 3)))
        t = rasterize(empty, 8, 6)
        np.testing.assert_array_equal(t.color, 0)
        np.testing.assert_array_equal(t.transmittance, 1)

    def test_single_at_mean(self):
        t = rasterize(one_splat([2.5, 2.5], 0.6, [1, 0, 0]), 5, 5)
        np.testing.assert_allclose(t.color[2, 2], [0.6, 0, 0], rtol=1e-15)
        assert t.transmittance[2, 2] == pytest.approx(0.4, rel=1e-15)

    def test_two_coincident(self):
        # red in front: 0.5 * 1; green behind: 0.5 * (1 - 0.5)
        s = concat(one_splat([1.5, 1.5], 0.5, [0, 1, 0], depth=2.0), one_splat([1.5, 1.5], 0.5, [1, 0, 0], depth=1.0))
        t = rasterize(s, 3, 3)
        np.testing.assert_allclose(t.color[1, 1], [0.5, 0.25, 0])
        assert t.transmittance[1, 1] == pytest.approx(0.25)

    def test_alpha_capped(self):
        t = rasterize(one_splat([0.5, 0.5], 1.0, [1, 1, 1]), 1, 1)
        assert t.transmittance[0, 0] == pytest.approx(1 - ALPHA_MAX)

    def test_singular_covariance_skipped(self):
        s = Splats(np.array([[1.0, 1.0]]), np.zeros((1, 2, 2)), np.ones(1), np.array([0.5]), np.ones((1, 3)))
        t = rasterize(s, 2, 2)
        assert t.skipped == 1
        np.testing.assert_array_equal(t.transmittance, 1)

    def test_matches_brute_force(self, rng):
        for _ in range(10):
            s = random_splats(rng, int(rng.integers(1, 21)), 16)
            t = rasterize(s, 16, 16)
            color, trans = brute_force_blend(s, 16, 16)
            assert np.max(np.abs(t.color - color)) < 1e-6
            assert np.max(np.abs(t.transmittance - trans)) < 1e-6

    def test_tiling_does_not_change_result(self, rng):
        s = random_splats(rng, 30, 40)
        a = rasterize(s, 40, 24, tile=16)
        b = rasterize(s, 40, 24, tile=7)
        np.testing.assert_allclose(a.color, b.color, atol=1e-12)

    def test_adding_a_gaussian_never_increases_transmittance(self, rng):
        for _ in range(20):
            s = random_splats(rng, 8, 16)
            extra = random_splats(rng, 1, 16)
            before = rasterize(s, 16, 16).transmittance
            after = rasterize(concat(s, extra), 16, 16).transmittance
            assert np.all(after <= before + 1e-15)
            assert np.all((after >= 0) & (after <= 1))

    def test_energy_bound(self, rng):
        for _ in range(20):
            t = rasterize(random_splats(rng, 20, 16, alpha_range=(0.5, 1.0)), 16, 16)
            assert np.max(t.color) <= 1 + 1e-6

    def test_equal_depth_ties_by_index(self):
        a = one_splat([1.5, 1.5], 0.5, [1, 0, 0], depth=1.0)
        b = one_splat([1.5, 1.5], 0.5, [0, 1, 0], depth=1.0)
        np.testing.assert_allclose(rasterize(concat(a, b), 3, 3).color[1, 1], [0.5, 0.25, 0])
        np.testing.assert_allclose(rasterize(concat(b, a), 3, 3).color[1, 1], [0.25, 0.5, 0])

    def test_bitwise_reproducible(self, rng):
        s = random_splats(rng, 20, 16)
        assert rasterize(s, 16, 16).color.tobytes() == rasterize(s, 16, 16).color.tobytes()


class TestRasterizeBackward:
    def test_zero_upstream(self, rng):
        _, cache = rasterize(random_splats(rng, 5, 8), 8, 8, need_cache=True)
        g = rasterize_backward(cache, np.zeros((8, 8, 3)))
        assert all(np.all(v == 0) for v in g.values())

    def test_missing_cache(self):
        with pytest.raises(ContractViolation):
            rasterize_backward(None, np.zeros((2, 2, 3)))

    def test_wrong_shape(self, rng):
        _, cache = rasterize(random_splats(rng, 3, 8), 8, 8, need_cache=True)
        with pytest.raises(ContractViolation):
            rasterize_backward(cache, np.zeros((4, 4, 3)))

    def test_single_pixel_linear_case(self):
        # C = c * alpha * g at the mean, so dC/dalpha = c * g and dC/dc = alpha
        s = one_splat([0.5, 0.5], 0.6, [0.2, 0.7, 0.4])
        _, cache = rasterize(s, 1, 1, need_cache=True)
        g = rasterize_backward(cache, np.ones((1, 1, 3)))
        assert g["alphas"][0] == pytest.approx(0.2 + 0.7 + 0.4)
        np.testing.assert_allclose(g["colors"][0], 0.6)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        s = random_splats(rng, 5, 8, alpha_range=(0.1, 0.9))
        s.means2d = rng.uniform(1, 7, (5, 2))
        gc = rng.normal(size=(8, 8, 3))
        gt = rng.normal(size=(8, 8))

        def f():
            t = rasterize(s, 8, 8)
            return float(np.sum(t.color * gc) + np.sum(t.transmittance * gt))

        _, cache = rasterize(s, 8, 8, need_cache=True)
        g = rasterize_backward(cache, gc, gt)
        for name, arr in (("alphas", s.alphas), ("colors", s.colors), ("means2d", s.means2d), ("cov2d", s.cov2d)):
            num = np.array([central_diff(f, arr, idx, h=1e-4) for idx in np.ndindex(arr.shape)]).reshape(arr.shape)
            err = rel_err(g[name], num, floor=1e-4)
            assert np.max(err) < 1e-3, name


def model_with_background(color):
    """Model whose color decoder outputs logit(color) everywhere."""
    model, cam, _ = micro_scene(n=2, size=6)
    net = model.color_decoder
    for arr in net.parameters():
        arr.fill(0)
    net.biases[-1][:] = logit(np.asarray(color, dtype=np.float64))
    return model, cam


class TestBackground:
    def composite(self, model, cam, target, tau):
        return composite_background(target, cam, model.rad_field, model.color_decoder, model.aabb,
                                    100.0, tau, model.config.n_frequencies)

    def test_empty_foreground_gives_background(self):
        model, cam = model_with_background([0.2, 0.6, 0.9])
        target = RenderTarget(np.zeros((6, 6, 3)), np.ones((6, 6)))
        np.testing.assert_allclose(self.composite(model, cam, target, 0.2),
                                   np.broadcast_to([0.2, 0.6, 0.9], (6, 6, 3)), atol=1e-12)

    def test_opaque_pixel_unchanged(self):
        model, cam = model_with_background([0.2, 0.6, 0.9])
        fg = np.full((6, 6, 3), 0.4)
        out = self.composite(model, cam, RenderTarget(fg.copy(), np.zeros((6, 6))), 0.0)
        np.testing.assert_array_equal(out, fg)

    def test_arithmetic_example(self):
        # 0.2 + 0.3 * 1, 0 + 0.3 * 1, 0 + 0.3 * 1
        model, cam = model_with_background([1 - 1e-13] * 3)
        fg = np.zeros((6, 6, 3))
        fg[..., 0] = 0.2
        out = self.composite(model, cam, RenderTarget(fg, np.full((6, 6), 0.3)), 0.2)
        np.testing.assert_allclose(out, np.broadcast_to([0.5, 0.3, 0.3], (6, 6, 3)), atol=1e-12)

    def test_threshold_skips_low_transmittance(self):
        model, cam = model_with_background([0.5, 0.5, 0.5])
        trans = np.linspace(0, 1, 36).reshape(6, 6)
        fg = np.zeros((6, 6, 3))
        skipped = self.composite(model, cam, RenderTarget(fg, trans), 0.2)
        full = self.composite(model, cam, RenderTarget(fg, trans), 0.0)
        low = trans <= 0.2
        np.testing.assert_array_equal(skipped[low], 0)
        np.testing.assert_array_equal(skipped[~low], full[~low])
        assert np.max(np.abs(skipped - full)) <= 0.2


class TestModelRender:
    def test_culling_is_lossless(self):
        for seed in range(5):
            model, cam = culling_scene(seed)
            a = model.render(cam).image
            b = model.render(cam, cull=False).image
            assert np.max(np.abs(a - b)) <= 1e-6

    def test_culled_footprints_miss_the_image(self):
        # the precondition behind lossless culling, checked directly
        for seed in range(5):
            model, cam = culling_scene(seed)
            culled = ~precull(model.gaussians.positions, cam, model.config.cull_tol).keep_mask
            alpha, scale, rot = model.activated_geometry()
            mean2d, cov2d, _, valid = project_gaussians(model.gaussians.positions, covariance_3d(scale, rot), cam)
            sel = culled & valid & (alpha >= ALPHA_MIN)
            radius = np.sqrt(2 * np.log(255 * alpha[sel]) * np.linalg.eigvalsh(cov2d[sel])[:, 1])
            gap_x = np.maximum(-mean2d[sel, 0], mean2d[sel, 0] - cam.width)
            gap_y = np.maximum(-mean2d[sel, 1], mean2d[sel, 1] - cam.height)
            assert np.all(np.maximum(gap_x, gap_y) > radius)

    def test_render_backward_needs_cache(self):
        model, cam, _ = micro_scene()
        out = model.render(cam)
        with pytest.raises(ContractViolation):
            model.backward(out, np.zeros_like(out.image))

    def test_float32_model_renders(self, rng):
        pts = rng.uniform(-0.5, 0.5, (10, 3))
        model = HybridModel.initialize(pts, rng.uniform(0, 1, (10, 3)), Aabb.cube(1.3), MICRO_CONFIG)
        cam = look_at([0, 0, -3], [0, 0, 0], fov_x=0.8, width=8, height=8)
        img = model.render(cam).image
        assert img.shape == (8, 8, 3) and np.all(np.isfinite(img))
