import numpy as np
import pytest

from hyrf.camera import look_at
from hyrf.data import load_dataset
from hyrf.errors import InvalidInputError
from hyrf.metrics import psnr
from hyrf.synth import SynthOptions, ground_truth_model, orbit_cameras, synth_scene

SMALL = SynthOptions(seed=3, n_gaussians=8, n_cameras=3, n_test=1, size=16)


def test_deterministic_bytes(tmp_path):
    synth_scene(SMALL, tmp_path / "a")
    synth_scene(SMALL, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) >= 7
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_closed_loop(tmp_path):
    ds, gt = synth_scene(SMALL, tmp_path)
    assert len(ds) == 4 and ds.splits.count("test") == 1
    reloaded = load_dataset(tmp_path)
    for cam, img in reloaded.views():
        rendered = gt.render(cam).image
        np.testing.assert_array_equal(rendered, img)
        assert psnr(rendered, img) == float("inf")


def test_in_memory_matches_written(tmp_path):
    ds_mem, _ = synth_scene(SMALL)
    ds_disk, _ = synth_scene(SMALL, tmp_path)
    for a, b in zip(ds_mem.images, ds_disk.images):
        np.testing.assert_array_equal(a, b)


def test_initial_points_near_truth():
    ds, gt = synth_scene(SynthOptions(seed=1, n_gaussians=20, n_cameras=1, n_test=0, size=8))
    assert len(ds.points) == 20
    assert np.max(np.abs(ds.points - gt.gaussians.positions)) < 0.5


def test_single_white_gaussian_centre_brighter():
    gt = ground_truth_model([[0.0, 0.0, 0.0]], [[0.99, 0.99, 0.99]], [0.15], [0.9], 0.25, (0.1, 0.1, 0.15))
    cam = look_at([0, 0, -3.0], [0, 0, 0], fov_x=0.69, width=16, height=16)
    img = gt.render(cam).image
    centre = img[7:9, 7:9].mean()
    for corner in (img[0, 0], img[0, -1], img[-1, 0], img[-1, -1]):
        assert centre > corner.mean() + 0.3
    np.testing.assert_allclose(img[0, 0], (0.1, 0.1, 0.15), atol=1e-6)


def test_ground_truth_attributes_recovered():
    gt = ground_truth_model([[0.1, 0.2, 0.3]], [[0.2, 0.5, 0.8]], [0.12], [0.7], 0.25, (0.1, 0.1, 0.15))
    alpha, scales, rot = gt.activated_geometry()
    assert alpha[0] == pytest.approx(0.7, abs=1e-6)
    np.testing.assert_allclose(scales[0], 0.12, atol=1e-6)
    np.testing.assert_allclose(rot[0], [1, 0, 0, 0])


def test_orbit_cameras_face_origin():
    for cam in orbit_cameras(6, 4.0, 10, 0.7):
        assert np.linalg.norm(cam.center) == pytest.approx(4.0)
        x = cam.world_to_camera(np.zeros(3))
        assert x[2] == pytest.approx(4.0) and abs(x[0]) < 1e-12 and abs(x[1]) < 1e-12


@pytest.mark.parametrize("kw", [dict(n_gaussians=0), dict(n_cameras=0), dict(scale_range=(0.1, 0.3))])
def test_bad_options(kw):
    with pytest.raises(InvalidInputError):
        SynthOptions(**kw)
