import numpy as np
import pytest

from hyrf.config import DataConfig, RunConfig, build_model, load_config, parse_config_text, scene_aabb
from hyrf.errors import ConfigurationError
from hyrf.model import ModelConfig


def test_defaults():
    run = load_config()
    assert run == RunConfig()
    m = run.model
    assert (m.n_levels, m.features_per_entry, m.hidden_width, m.hidden_layers) == (16, 2, 64, 2)
    assert m.tau_t == 0.2 and m.sphere_radius == 100.0
    assert run.data.aabb_mode == "camera"


@pytest.mark.parametrize("scene_class,log2", [("synthetic", 17), ("standard", 18), ("large", 21)])
def test_hash_size_by_scene_class(scene_class, log2):
    cfg = ModelConfig(scene_class=scene_class)
    assert cfg.radiance_field_config().log2_max_entries == log2
    assert cfg.geometry_field_config().log2_max_entries == log2 - 1


def test_file_then_overrides(tmp_path):
    (tmp_path / "c.ini").write_text("[train]\niterations = 50  # short\nlr_hash = 0.5\n"
                                    "[data]\naabb_mode = fixed\naabb = -1, -1, -1, 1, 1, 1\n")
    run = load_config(tmp_path / "c.ini", ["train.iterations=7", "model.tau_t=0"])
    assert run.train.iterations == 7 and run.train.lr_hash == 0.5
    assert run.model.tau_t == 0.0
    assert run.data.aabb == (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0)


def test_text_round_trip():
    run = load_config(overrides=["train.iterations=3", "data.white_background=yes"])
    parsed = parse_config_text(run.to_text())
    from hyrf.config import apply

    assert apply(RunConfig(), parsed) == run


@pytest.mark.parametrize("override", [
    "train.nope=1", "nope.iterations=1", "train.iterations=abc", "iterations=3",
    "data.white_background=maybe", "data.aabb_mode=sphere", "train.lambda_ssim=2",
])
def test_bad_overrides(override):
    with pytest.raises(ConfigurationError):
        load_config(overrides=[override])


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "none.ini")


def test_fixed_mode_needs_six_values():
    with pytest.raises(ConfigurationError):
        DataConfig(aabb_mode="fixed", aabb=(1.0, 2.0))


class _FakeDataset:
    def __init__(self, points, centers):
        from hyrf.data import Dataset

        self.points = np.asarray(points, float)
        self.point_colors = np.full_like(self.points, 0.5)
        self._centers = np.asarray(centers, float)
        self.cameras = [type("C", (), {"center": c})() for c in self._centers]
        self.camera_aabb = Dataset.camera_aabb.__get__(self)


def test_aabb_modes():
    rng = np.random.default_rng(0)
    ds = _FakeDataset(rng.normal(size=(1000, 3)), [[0, 0, 4], [4, 0, 0], [0, 2, -4]])
    box = scene_aabb(ds, DataConfig())
    # 10% of the largest camera extent on every axis
    np.testing.assert_allclose(box.min_corner, [-0.8, -0.8, -4.8])
    np.testing.assert_allclose(box.max_corner, [4.8, 2.8, 4.8])
    box = scene_aabb(ds, DataConfig(aabb_mode="percentile"))
    np.testing.assert_allclose(box.min_corner, np.percentile(ds.points, 1, axis=0))
    box = scene_aabb(ds, DataConfig(aabb_mode="fixed", aabb=(-1, -2, -3, 1, 2, 3)))
    np.testing.assert_array_equal(box.max_corner, [1, 2, 3])


def test_degenerate_boxes_rejected():
    single_cam = _FakeDataset(np.zeros((5, 3)), [[0, 0, 4]])
    with pytest.raises(ConfigurationError):
        scene_aabb(single_cam, DataConfig())
    with pytest.raises(ConfigurationError):
        scene_aabb(single_cam, DataConfig(aabb_mode="percentile"))


def test_build_model_uses_config():
    rng = np.random.default_rng(0)
    ds = _FakeDataset(rng.normal(size=(20, 3)), [[0, 0, 4], [4, 0, 0], [0, 2, -4]])
    run = load_config(overrides=["model.n_levels=2", "model.log2_hash_size=8", "model.finest_resolution=32",
                                 "data.init_opacity=0.3"])
    model = build_model(ds, run)
    assert len(model.geo_field.tables) == 2
    np.testing.assert_allclose(model.activated_opacity().mean(), 0.3, atol=0.1)
