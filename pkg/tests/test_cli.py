import csv
import json

import numpy as np
import pytest

from hyrf.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main
from hyrf.imageio import read_image

SMALL_MODEL = ["--set", "model.n_levels=2", "--set", "model.log2_hash_size=8",
               "--set", "model.finest_resolution=64", "--set", "model.hidden_width=16"]


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--seed", "2", "--n", "6", "--cameras", "3", "--test-views", "1",
                 "--size", "12", "--out", str(root)]) == EXIT_OK
    return root


def test_synth_writes_layout(scene):
    for name in ("gt.ckpt", "hyrf.ini", "points3d.ply", "transforms_train.json", "transforms_test.json"):
        assert (scene / name).is_file()


def test_eval_ground_truth_is_perfect(scene, tmp_path, capsys):
    out = tmp_path / "e.json"
    assert main(["eval", "--checkpoint", str(scene / "gt.ckpt"), "--data", str(scene), "--json", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["mean_psnr"] == "inf"
    assert report["mean_ssim"] == pytest.approx(1.0, abs=1e-9)
    assert "mean" in capsys.readouterr().out


def test_render_by_index(scene, tmp_path):
    out = tmp_path / "v.png"
    assert main(["render", "--checkpoint", str(scene / "gt.ckpt"), "--data", str(scene),
                 "--camera", "0", "--out", str(out), "--transmittance", str(tmp_path / "t.png")]) == 0
    assert read_image(out).shape == (12, 12, 3)
    assert (tmp_path / "t.png").is_file()


def test_render_by_camera_file(scene, tmp_path):
    from hyrf.data import load_dataset

    cam = load_dataset(scene).cameras[1]
    (tmp_path / "cam.json").write_text(json.dumps(cam.to_dict()))
    assert main(["render", "--checkpoint", str(scene / "gt.ckpt"), "--camera", str(tmp_path / "cam.json"),
                 "--out", str(tmp_path / "v.png")]) == 0


def test_render_into_missing_directory(scene, tmp_path):
    code = main(["render", "--checkpoint", str(scene / "gt.ckpt"), "--data", str(scene),
                 "--camera", "0", "--out", str(tmp_path / "missing" / "v.png")])
    assert code == EXIT_USAGE


def test_train_ten_iterations(scene, tmp_path):
    out = tmp_path / "run"
    code = main(["--threads", "1", "train", "--data", str(scene), "--config", str(scene / "hyrf.ini"),
                 "--out", str(out), "--iterations", "10", *SMALL_MODEL])
    assert code == EXIT_OK
    assert (out / "model.ckpt").is_file() and (out / "config.ini").is_file()
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["iteration"] == "10"


def test_compress_round_trip(scene, tmp_path):
    bundle, back = tmp_path / "m.hyrfz", tmp_path / "back.ckpt"
    assert main(["compress", "--checkpoint", str(scene / "gt.ckpt"), "--out", str(bundle),
                 "--stages", "2", "--codebook-size", "4"]) == 0
    assert main(["decompress", "--bundle", str(bundle), "--out", str(back)]) == 0
    assert main(["eval", "--checkpoint", str(back), "--data", str(scene)]) == 0


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["train", "--data", "x"], ["render", "--bogus"], ["synth", "--n", "many", "--out", "x"],
])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_bad_config_key(scene, tmp_path):
    code = main(["train", "--data", str(scene), "--out", str(tmp_path), "--set", "train.nope=1"])
    assert code == EXIT_USAGE


def test_camera_index_out_of_range(scene, tmp_path):
    code = main(["render", "--checkpoint", str(scene / "gt.ckpt"), "--data", str(scene),
                 "--camera", "99", "--out", str(tmp_path / "v.png")])
    assert code == EXIT_USAGE


def test_missing_data_is_data_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_corrupt_checkpoint_is_data_error(scene, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes((scene / "gt.ckpt").read_bytes()[:100])
    assert main(["eval", "--checkpoint", str(bad), "--data", str(scene)]) == EXIT_DATA


def test_missing_checkpoint_is_data_error(scene, tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(scene)]) == EXIT_DATA


def test_divergence_exit_code(scene, tmp_path):
    # a huge step throws the positions past float range
    code = main(["train", "--data", str(scene), "--config", str(scene / "hyrf.ini"), "--out", str(tmp_path),
                 "--iterations", "3", "--set", "train.lr_position=1e308", *SMALL_MODEL])
    assert code == EXIT_DIVERGED
    assert (tmp_path / "divergence_dump.npz").is_file()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "train" in capsys.readouterr().out
