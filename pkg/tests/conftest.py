import numpy as np
import pytest

from hyrf.camera import look_at
from hyrf.geometry import Aabb
from hyrf.metrics import loss_and_grad
from hyrf.model import HybridModel, ModelConfig
from hyrf.render import Splats

# two levels: a dense 3^3 grid and a hashed 5^3 grid folded into 64 rows
MICRO_CONFIG = ModelConfig(n_levels=2, features_per_entry=2, base_resolution=2, finest_resolution=4,
                           log2_hash_size=6, hidden_width=8, hidden_layers=2, tau_t=0.0)


def rel_err(analytic, numeric, floor=1e-6):
    """Elementwise relative error with an absolute floor for near-zero entries."""
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def central_diff(f, arr, idx, h=1e-6):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def micro_scene(seed=1, n=3, size=4, config=MICRO_CONFIG):
    """Float64 model with ``n`` Gaussians in front of a ``size`` x ``size`` camera."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.5, 0.5, (n, 3))
    model = HybridModel.initialize(pts, rng.uniform(0, 1, (n, 3)), Aabb.cube(1.3), config,
                                   dtype=np.float64, init_opacity=0.6, seed=seed)
    model.s_max = 0.5
    model.gaussians.colors += rng.normal(0, 0.3, (n, 3))
    cam = look_at([0.3, 0.2, -2.5], [0, 0, 0], fov_x=0.9, width=size, height=size)
    gt = rng.uniform(0, 1, (size, size, 3))
    return model, cam, gt


def model_loss(model, cam, gt, lam=0.2):
    out = model.render(cam, need_cache=True)
    (total, _, _), grad = loss_and_grad(out.image, gt, lam)
    return total, out, grad


def random_splats(rng, n, size, alpha_range=(0.05, 0.95)):
    means = rng.uniform(-2, size + 2, (n, 2))
    a = rng.uniform(0.5, 4.0, n)
    b = rng.uniform(0.5, 4.0, n)
    theta = rng.uniform(0, np.pi, n)
    rot = np.stack([np.stack([np.cos(theta), -np.sin(theta)], -1),
                    np.stack([np.sin(theta), np.cos(theta)], -1)], -2)
    cov = rot @ (np.stack([a**2, b**2], -1)[..., None] * np.eye(2)) @ np.swapaxes(rot, -1, -2)
    return Splats(means, cov, rng.uniform(0.5, 5.0, n), rng.uniform(*alpha_range, n), rng.uniform(0, 1, (n, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def culling_scene(seed, n=200, size=64):
    """Random Gaussians filling the scene box, seen by an orbit camera.

    The default s_max (1% of the box diagonal) keeps every footprint smaller
    than the culling tolerance band, which is the regime the band is sized for.
    """
    from hyrf.synth import orbit_cameras

    rng = np.random.default_rng(seed)
    config = ModelConfig(**{**MICRO_CONFIG.to_dict(), "tau_t": 0.2})
    model = HybridModel.initialize(rng.uniform(-1.3, 1.3, (n, 3)), rng.uniform(0, 1, (n, 3)), Aabb.cube(1.3),
                                   config, dtype=np.float64, init_opacity=0.9, seed=seed)
    model.gaussians.scales[:] = rng.normal(0, 2, n)
    cam = orbit_cameras(5, 4.0, size, 0.69, phase=rng.uniform(0, 2 * np.pi))[seed % 5]
    return model, cam


# one line per acceptance criterion, printed after the run even without -s
ACCEPTANCE_LINES = []


def report_criterion(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
